//! Brute-force consistency oracle. Scans every cache entry at one snapshot,
//! re-derives its value by executing the sub-query instance directly against
//! the graph, and reports every disagreement. The oracle deliberately shares
//! nothing with the maintenance code paths: it uses only raw key-value reads,
//! key parsing, and direct instance execution.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::{Cache, CACHE_SUBSPACE};
use crate::graphstore::{Graph, VertexId};
use crate::kvstore::{Mode, Transaction};
use crate::templates::{execute_instance, parse_key, TemplateRegistry, WildcardBinding};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Violation {
    pub key: String,
    pub reason: String,
}

fn violation(key: &str, reason: impl Into<String>) -> Violation {
    Violation { key: key.to_string(), reason: reason.into() }
}

/// Checks every entry under the cache subspace against a direct recompute.
/// Returns an empty vector when the cache is consistent.
pub fn oracle_check(
    graph: &Graph,
    cache: &Cache,
    registry: &TemplateRegistry,
) -> Result<Vec<Violation>> {
    let mut tx = graph.begin(Mode::ReadOnly);
    oracle_check_in(graph, cache, registry, &mut tx)
}

/// Same as [`oracle_check`] but at the caller's snapshot.
pub fn oracle_check_in(
    graph: &Graph,
    cache: &Cache,
    registry: &TemplateRegistry,
    tx: &mut Transaction,
) -> Result<Vec<Violation>> {
    let mut violations = Vec::new();

    // Group raw chunk rows by entry. Template names and escaped values cannot
    // contain '/', so the last separator always splits off the chunk index.
    let mut entries: BTreeMap<String, Vec<(String, Vec<u8>)>> = BTreeMap::new();
    for (k, v) in tx.range_scan(CACHE_SUBSPACE)? {
        let Ok(text) = String::from_utf8(k) else {
            violations.push(violation("<non-utf8>", "cache key is not UTF-8"));
            continue;
        };
        let body = &text[CACHE_SUBSPACE.len()..];
        match body.rsplit_once('/') {
            Some((base, index)) => {
                entries.entry(base.to_string()).or_default().push((index.to_string(), v));
            }
            None => violations.push(violation(body, "cache row without chunk index")),
        }
    }

    for (base, chunks) in entries {
        if let Some(v) = check_entry(graph, registry, cache, tx, &base, &chunks)? {
            violations.push(v);
        }
    }
    Ok(violations)
}

fn check_entry(
    graph: &Graph,
    registry: &TemplateRegistry,
    cache: &Cache,
    tx: &mut Transaction,
    base: &str,
    chunks: &[(String, Vec<u8>)],
) -> Result<Option<Violation>> {
    // chunk indices must be 6-digit, contiguous from zero
    for (i, (index, _)) in chunks.iter().enumerate() {
        if index.len() != 6 || *index != format!("{i:06}") {
            return Ok(Some(violation(base, format!("bad chunk index {index:?} at position {i}"))));
        }
    }
    let bytes: Vec<u8> = chunks.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let stored = match cache.decode(&bytes) {
        Ok(ids) => ids,
        Err(e) => return Ok(Some(violation(base, format!("undecodable value: {e}")))),
    };

    let (name, root, bindings) = match parse_key(base) {
        Ok(parts) => parts,
        Err(e) => return Ok(Some(violation(base, format!("unparsable key: {e}")))),
    };
    let Some(template) = registry.get(&name) else {
        return Ok(Some(violation(base, format!("entry for unknown template {name:?}"))));
    };

    // split the bindings back into edge and leaf halves, in declared order
    let edge_names = template.edge_pred.wildcard_names();
    let leaf_names = template.leaf_pred.wildcard_names();
    if bindings.len() != edge_names.len() + leaf_names.len() {
        return Ok(Some(violation(base, "binding arity differs from template wildcards")));
    }
    let (edge_part, leaf_part) = bindings.split_at(edge_names.len());
    for ((got, _), want) in
        edge_part.iter().zip(&edge_names).chain(leaf_part.iter().zip(&leaf_names))
    {
        if got != want {
            return Ok(Some(violation(base, format!("binding name {got:?}, template declares {want:?}"))));
        }
    }
    let edge_values = WildcardBinding { values: edge_part.to_vec() };
    let leaf_values = WildcardBinding { values: leaf_part.to_vec() };

    let expected: Vec<VertexId> =
        execute_instance(graph, tx, &template, root, &edge_values, &leaf_values)?;
    if stored != expected {
        return Ok(Some(violation(
            base,
            format!("stored {} ids, recompute yields {} ids", stored.len(), expected.len()),
        )));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::harness::engine::{Engine, EngineConfig};
    use crate::harness::synth;
    use crate::kvstore::Mode;

    fn warmed_engine() -> Engine {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        e.load_graph(&synth::graph_jsonl(synth::SynthSpec {
            vertices: 200,
            edges: 600,
            seed: 1,
        }))
        .unwrap();
        e.register_and_enable_templates(synth::templates_jsonl()).unwrap();
        for list in 0..20u64 {
            let q = format!(
                "g.V(\"{list}\").outE(\"includes\").has(\"IsActive\",true).inV().has(\"Status\",0).id()"
            );
            e.read(&q).unwrap();
        }
        e.drain_cp().unwrap();
        e
    }

    #[test]
    fn clean_cache_passes() {
        let e = warmed_engine();
        assert_eq!(oracle_check(&e.graph, &e.cache, &e.registry).unwrap(), vec![]);
    }

    #[test]
    fn stale_value_is_reported() {
        let e = warmed_engine();
        // find one populated entry and tamper with it
        let mut tx = e.graph.begin(Mode::ReadOnly);
        let rows = tx.range_scan(CACHE_SUBSPACE).unwrap();
        let key = String::from_utf8(rows[0].0.clone()).unwrap();
        let base = key[CACHE_SUBSPACE.len()..].rsplit_once('/').unwrap().0.to_string();
        drop(tx);
        let mut tx = e.graph.begin(Mode::ReadWrite);
        e.cache.put_entry(&mut tx, &base, &[VertexId(123_456_789)]).unwrap();
        tx.commit().unwrap();
        let violations = oracle_check(&e.graph, &e.cache, &e.registry).unwrap();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].key, base);
    }

    #[test]
    fn foreign_and_garbage_keys_are_reported() {
        let e = warmed_engine();
        let mut tx = e.graph.begin(Mode::ReadWrite);
        e.cache.put_entry(&mut tx, "SQ99:1:", &[]).unwrap();
        tx.set(b"C/garbage-row", b"zzz").unwrap();
        tx.commit().unwrap();
        let violations = oracle_check(&e.graph, &e.cache, &e.registry).unwrap();
        assert_eq!(violations.len(), 2);
        assert!(violations.iter().any(|v| v.reason.contains("unknown template")));
        assert!(violations.iter().any(|v| v.reason.contains("chunk index")));
    }

    #[test]
    fn oracle_is_policy_blind_on_fig1() {
        // same check passes on the worked-example fixture after manual CP
        let (graph, _) = fixture::fig1();
        let e = Engine::new(EngineConfig::default()).unwrap();
        // borrow the fixture graph but reuse the engine's cache/registry
        let registry = crate::templates::TemplateRegistry::new();
        registry.install(std::sync::Arc::new(fixture::sq1()));
        let cache = e.cache.clone();
        let mut tx = graph.begin(Mode::ReadWrite);
        let template = registry.get("SQ1").unwrap();
        let we =
            WildcardBinding { values: vec![("IsActive".into(), crate::graphstore::Scalar::Bool(true))] };
        let wl =
            WildcardBinding { values: vec![("Status".into(), crate::graphstore::Scalar::Int(0))] };
        let ids = execute_instance(&graph, &mut tx, &template, fixture::WATCH_LIST, &we, &wl)
            .unwrap();
        assert_eq!(ids.len(), 25);
        let key = crate::templates::build_key(&template, fixture::WATCH_LIST, we, wl).unwrap();
        cache.put_entry(&mut tx, &key.rendered, &ids).unwrap();
        tx.commit().unwrap();
        assert_eq!(oracle_check(&graph, &cache, &registry).unwrap(), vec![]);
    }
}
