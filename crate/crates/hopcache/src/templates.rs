//! Sub-query templates: the (root, edge, leaf) predicate triple with
//! wildcards, predicate evaluation, wildcard-value extraction, and cache-key
//! construction.
//!
//! A rendered key is `<template>:<root-id>:` followed by `name=value` pairs
//! joined with `&`, edge values first then leaf values, each group in
//! template-declared order, e.g. `SQ1:10:IsActive=true&Status=0`. Reserved
//! characters in string values are `%xx`-escaped so rendering stays injective.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graphstore::{Direction, Edge, Graph, Properties, Scalar, Vertex, VertexId};
use crate::kvstore::Transaction;

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Exact(Scalar),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropTerm {
    pub name: String,
    pub matcher: Matcher,
}

/// A predicate over a vertex or edge: an optional label filter plus property
/// terms. An empty predicate returns true always.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predicate {
    pub label_filter: Option<String>,
    pub terms: Vec<PropTerm>,
}

impl Predicate {
    pub fn new(label: Option<&str>, terms: Vec<PropTerm>) -> Self {
        Predicate { label_filter: label.map(str::to_string), terms }
    }

    pub fn references(&self, prop: &str) -> bool {
        self.terms.iter().any(|t| t.name == prop)
    }

    pub fn wildcard_names(&self) -> Vec<&str> {
        self.terms
            .iter()
            .filter(|t| t.matcher == Matcher::Wildcard)
            .map(|t| t.name.as_str())
            .collect()
    }
}

/// Evaluates exact terms and the label filter. Wildcard terms are treated as
/// satisfied here; candidacy for key construction additionally requires
/// [`has_all_wildcards`].
pub fn evaluate(pred: &Predicate, label: &str, props: &Properties) -> bool {
    if let Some(want) = &pred.label_filter {
        if want != label {
            return false;
        }
    }
    for term in &pred.terms {
        if let Matcher::Exact(want) = &term.matcher {
            match props.get(&term.name) {
                Some(got) if got == want => {}
                _ => return false,
            }
        }
    }
    true
}

pub fn evaluate_vertex(pred: &Predicate, v: &Vertex) -> bool {
    evaluate(pred, &v.label, &v.properties)
}

pub fn evaluate_edge(pred: &Predicate, e: &Edge) -> bool {
    evaluate(pred, &e.label, &e.properties)
}

/// True when the element carries every wildcard property of the predicate.
pub fn has_all_wildcards(pred: &Predicate, props: &Properties) -> bool {
    pred.terms
        .iter()
        .filter(|t| t.matcher == Matcher::Wildcard)
        .all(|t| props.contains_key(&t.name))
}

/// Ordered wildcard name/value pairs, in template-declared order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WildcardBinding {
    pub values: Vec<(String, Scalar)>,
}

impl WildcardBinding {
    pub fn get(&self, name: &str) -> Option<&Scalar> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// Extracts the values of the predicate's wildcard properties from an
/// element, in template-declared order. Callers check wildcard presence
/// first; a missing property here is an error.
pub fn extract_wildcard_values(pred: &Predicate, props: &Properties) -> Result<WildcardBinding> {
    let mut values = Vec::new();
    for term in &pred.terms {
        if term.matcher == Matcher::Wildcard {
            let v = props
                .get(&term.name)
                .ok_or_else(|| Error::MissingWildcardProperty(term.name.clone()))?;
            values.push((term.name.clone(), v.clone()));
        }
    }
    Ok(WildcardBinding { values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubQueryTemplate {
    pub name: String,
    pub root_pred: Predicate,
    pub edge_pred: Predicate,
    pub leaf_pred: Predicate,
    pub direction: Direction,
}

impl SubQueryTemplate {
    pub fn new(
        name: &str,
        root_pred: Predicate,
        edge_pred: Predicate,
        leaf_pred: Predicate,
        direction: Direction,
    ) -> Result<Self> {
        if name.is_empty() || name.bytes().any(|b| matches!(b, b':' | b'&' | b'%' | b'/' | b'=')) {
            return Err(Error::InvalidSpec(format!(
                "template name {name:?} must be non-empty and free of separator characters"
            )));
        }
        // Root wildcards have no place in the key scheme; only edge and leaf
        // wildcard values parameterize an instance.
        if root_pred.terms.iter().any(|t| t.matcher == Matcher::Wildcard) {
            return Err(Error::InvalidSpec(format!(
                "template {name}: root predicate must not use wildcards"
            )));
        }
        Ok(SubQueryTemplate { name: name.to_string(), root_pred, edge_pred, leaf_pred, direction })
    }

    pub fn edge_label(&self) -> Option<&str> {
        self.edge_pred.label_filter.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub template_name: String,
    pub root: VertexId,
    pub edge_values: WildcardBinding,
    pub leaf_values: WildcardBinding,
    pub rendered: String,
}

const RESERVED: &[u8] = b":&%/=";

fn escape_into(out: &mut String, s: &str) {
    for b in s.bytes() {
        if RESERVED.contains(&b) || b < 0x20 {
            out.push('%');
            out.push_str(&format!("{b:02x}"));
        } else {
            out.push(b as char);
        }
    }
}

fn looks_like_bool_or_int(s: &str) -> bool {
    if s == "true" || s == "false" {
        return true;
    }
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Deterministic, injective scalar rendering. Strings that would collide with
/// a boolean or integer rendering get their first character `%`-escaped.
pub fn render_scalar(s: &Scalar) -> String {
    match s {
        Scalar::Bool(b) => b.to_string(),
        Scalar::Int(i) => i.to_string(),
        Scalar::Str(v) => {
            let mut out = String::new();
            if looks_like_bool_or_int(v) {
                let first = v.as_bytes()[0];
                out.push('%');
                out.push_str(&format!("{first:02x}"));
                escape_into(&mut out, &v[1..]);
            } else {
                escape_into(&mut out, v);
            }
            out
        }
    }
}

/// Inverse of [`render_scalar`].
pub fn parse_scalar(raw: &str) -> Result<Scalar> {
    if raw == "true" {
        return Ok(Scalar::Bool(true));
    }
    if raw == "false" {
        return Ok(Scalar::Bool(false));
    }
    if looks_like_bool_or_int(raw) {
        return raw
            .parse::<i64>()
            .map(Scalar::Int)
            .map_err(|e| Error::MalformedValue(format!("bad int in key: {e}")));
    }
    let mut out = Vec::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err(Error::MalformedValue("truncated escape in key".into()));
            }
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3])
                .map_err(|_| Error::MalformedValue("bad escape".into()))?;
            out.push(
                u8::from_str_radix(hex, 16)
                    .map_err(|_| Error::MalformedValue("bad escape".into()))?,
            );
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(Scalar::Str(
        String::from_utf8(out).map_err(|_| Error::MalformedValue("non-utf8 key value".into()))?,
    ))
}

fn check_binding(pred: &Predicate, binding: &WildcardBinding, side: &str) -> Result<()> {
    let want = pred.wildcard_names();
    let got: Vec<&str> = binding.values.iter().map(|(n, _)| n.as_str()).collect();
    if want != got {
        return Err(Error::BindingMismatch(format!(
            "{side} binding {got:?} does not cover wildcards {want:?}"
        )));
    }
    Ok(())
}

/// Renders the cache key for one sub-query instance.
pub fn build_key(
    template: &SubQueryTemplate,
    root: VertexId,
    edge_values: WildcardBinding,
    leaf_values: WildcardBinding,
) -> Result<CacheKey> {
    check_binding(&template.edge_pred, &edge_values, "edge")?;
    check_binding(&template.leaf_pred, &leaf_values, "leaf")?;
    let mut rendered = format!("{}:{}:", template.name, root.0);
    let mut first = true;
    for (name, value) in edge_values.values.iter().chain(leaf_values.values.iter()) {
        if !first {
            rendered.push('&');
        }
        first = false;
        rendered.push_str(&render_scalar(&Scalar::Str(name.clone())));
        rendered.push('=');
        rendered.push_str(&render_scalar(value));
    }
    Ok(CacheKey { template_name: template.name.clone(), root, edge_values, leaf_values, rendered })
}

/// Prefix covering every wildcard combination for one root: `<template>:<id>:`.
pub fn root_prefix(template: &SubQueryTemplate, root: VertexId) -> String {
    format!("{}:{}:", template.name, root.0)
}

/// Parses a rendered key back into its parts. Used by the consistency oracle.
pub fn parse_key(rendered: &str) -> Result<(String, VertexId, Vec<(String, Scalar)>)> {
    let mut parts = rendered.splitn(3, ':');
    let name = parts.next().unwrap_or_default();
    let root = parts
        .next()
        .ok_or_else(|| Error::MalformedValue(format!("key {rendered:?} missing root id")))?;
    let params = parts
        .next()
        .ok_or_else(|| Error::MalformedValue(format!("key {rendered:?} missing parameters")))?;
    let root: u64 = root
        .parse()
        .map_err(|_| Error::MalformedValue(format!("bad root id in key {rendered:?}")))?;
    let mut values = Vec::new();
    if !params.is_empty() {
        for pair in params.split('&') {
            let (n, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::MalformedValue(format!("bad parameter {pair:?}")))?;
            let name = match parse_scalar(n)? {
                Scalar::Str(s) => s,
                Scalar::Bool(b) => b.to_string(),
                Scalar::Int(i) => i.to_string(),
            };
            values.push((name, parse_scalar(v)?));
        }
    }
    Ok((name.to_string(), VertexId(root), values))
}

/// Executes one sub-query instance at the transaction's snapshot: the
/// template's predicates with wildcards specialized by the bindings. Returns
/// ascending leaf ids; empty when the root is missing or fails the root
/// predicate.
pub fn execute_instance(
    graph: &Graph,
    tx: &mut Transaction,
    template: &SubQueryTemplate,
    root: VertexId,
    edge_values: &WildcardBinding,
    leaf_values: &WildcardBinding,
) -> Result<Vec<VertexId>> {
    let root_vertex = match graph.vertex(tx, root)? {
        Some(v) => v,
        None => return Ok(Vec::new()),
    };
    if !evaluate_vertex(&template.root_pred, &root_vertex) {
        return Ok(Vec::new());
    }
    let edge_pred = template.edge_pred.clone();
    let leaf_pred = template.leaf_pred.clone();
    let we = edge_values.clone();
    let wl = leaf_values.clone();
    let edge_ok = move |e: &Edge| {
        evaluate_edge(&edge_pred, e)
            && edge_pred
                .wildcard_names()
                .iter()
                .all(|n| e.properties.get(*n) == we.get(n))
    };
    let leaf_ok = move |v: &Vertex| {
        evaluate_vertex(&leaf_pred, v)
            && leaf_pred
                .wildcard_names()
                .iter()
                .all(|n| v.properties.get(*n) == wl.get(n))
    };
    graph.neighbors(tx, root, template.direction, template.edge_label(), &edge_ok, &leaf_ok)
}

// --- template definition files (JSON lines) ---

#[derive(Deserialize)]
struct PredDef {
    label: Option<String>,
    #[serde(default)]
    props: Vec<PropDef>,
}

#[derive(Deserialize)]
struct PropDef {
    name: String,
    #[serde(rename = "match")]
    matcher: serde_json::Value,
}

#[derive(Deserialize)]
struct TemplateDef {
    name: String,
    root: Option<PredDef>,
    dir: Direction,
    edge: Option<PredDef>,
    leaf: Option<PredDef>,
}

fn pred_from_def(def: Option<PredDef>) -> Result<Predicate> {
    let Some(def) = def else { return Ok(Predicate::default()) };
    let mut terms = Vec::new();
    for p in def.props {
        let matcher = match &p.matcher {
            serde_json::Value::String(s) if s == "?" => Matcher::Wildcard,
            serde_json::Value::String(s) => Matcher::Exact(Scalar::Str(s.clone())),
            serde_json::Value::Bool(b) => Matcher::Exact(Scalar::Bool(*b)),
            serde_json::Value::Number(n) => Matcher::Exact(Scalar::Int(
                n.as_i64().ok_or_else(|| Error::InvalidSpec("non-integer number".into()))?,
            )),
            other => return Err(Error::InvalidSpec(format!("bad matcher {other}"))),
        };
        terms.push(PropTerm { name: p.name, matcher });
    }
    Ok(Predicate { label_filter: def.label, terms })
}

/// Parses one template from its single-line JSON definition.
pub fn parse_template(line: &str) -> Result<SubQueryTemplate> {
    let def: TemplateDef = serde_json::from_str(line)?;
    SubQueryTemplate::new(
        &def.name,
        pred_from_def(def.root)?,
        pred_from_def(def.edge)?,
        pred_from_def(def.leaf)?,
        def.dir,
    )
}

// --- registry ---

struct RegistryEntry {
    template: Arc<SubQueryTemplate>,
    read_active: bool,
    invalidate_active: bool,
}

/// Per-node template registry with the two activation flags of the template
/// life-cycle. A node never serves cached reads for a template whose writes
/// it is not maintaining.
#[derive(Default)]
pub struct TemplateRegistry {
    entries: RwLock<BTreeMap<String, RegistryEntry>>,
}

impl TemplateRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn install(&self, template: Arc<SubQueryTemplate>) {
        let mut entries = self.entries.write().unwrap();
        entries
            .entry(template.name.clone())
            .or_insert(RegistryEntry { template, read_active: false, invalidate_active: false });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.read().unwrap().contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<Arc<SubQueryTemplate>> {
        self.entries.read().unwrap().get(name).map(|e| e.template.clone())
    }

    pub fn set_invalidate_active(&self, name: &str, active: bool) {
        if let Some(e) = self.entries.write().unwrap().get_mut(name) {
            e.invalidate_active = active;
        }
    }

    pub fn set_read_active(&self, name: &str, active: bool) {
        if let Some(e) = self.entries.write().unwrap().get_mut(name) {
            e.read_active = active;
        }
    }

    pub fn flags(&self, name: &str) -> Option<(bool, bool)> {
        self.entries.read().unwrap().get(name).map(|e| (e.read_active, e.invalidate_active))
    }

    /// Templates whose cached reads are active.
    pub fn snapshot_read_active(&self) -> Vec<Arc<SubQueryTemplate>> {
        self.entries
            .read()
            .unwrap()
            .values()
            .filter(|e| e.read_active)
            .map(|e| e.template.clone())
            .collect()
    }

    /// Templates whose write-side maintenance is active.
    pub fn snapshot_invalidate_active(&self) -> Vec<Arc<SubQueryTemplate>> {
        self.entries
            .read()
            .unwrap()
            .values()
            .filter(|e| e.invalidate_active)
            .map(|e| e.template.clone())
            .collect()
    }

    /// Checks the safety core of the two-phase design on every entry.
    pub fn assert_flag_safety(&self) {
        for (name, e) in self.entries.read().unwrap().iter() {
            assert!(
                !e.read_active || e.invalidate_active,
                "template {name}: read_active without invalidate_active"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::kvstore::Mode;

    fn sq1() -> SubQueryTemplate {
        fixture::sq1()
    }

    #[test]
    fn evaluate_exact_and_empty() {
        let leaf = Predicate::new(
            None,
            vec![PropTerm { name: "Status".into(), matcher: Matcher::Exact(Scalar::Int(0)) }],
        );
        let mut props = Properties::new();
        props.insert("Status".into(), Scalar::Int(0));
        assert!(evaluate(&leaf, "listing", &props));
        assert!(evaluate(&Predicate::default(), "anything", &props));
        // missing property fails an exact term
        let age = Predicate::new(
            None,
            vec![PropTerm { name: "age".into(), matcher: Matcher::Exact(Scalar::Int(30)) }],
        );
        assert!(!evaluate(&age, "v", &Properties::new()));
    }

    #[test]
    fn wildcard_needs_presence_only_for_extraction() {
        let pred = Predicate::new(
            None,
            vec![PropTerm { name: "IsActive".into(), matcher: Matcher::Wildcard }],
        );
        let empty = Properties::new();
        assert!(evaluate(&pred, "e", &empty));
        assert!(!has_all_wildcards(&pred, &empty));
        assert!(matches!(
            extract_wildcard_values(&pred, &empty),
            Err(Error::MissingWildcardProperty(_))
        ));
    }

    #[test]
    fn extract_wildcards_in_declared_order() {
        let pred = Predicate::new(
            None,
            vec![
                PropTerm { name: "IsActive".into(), matcher: Matcher::Exact(Scalar::Bool(true)) },
                PropTerm { name: "weight".into(), matcher: Matcher::Wildcard },
            ],
        );
        let mut props = Properties::new();
        props.insert("IsActive".into(), Scalar::Bool(true));
        props.insert("weight".into(), Scalar::Int(3));
        let binding = extract_wildcard_values(&pred, &props).unwrap();
        assert_eq!(binding.values, vec![("weight".to_string(), Scalar::Int(3))]);

        let none = extract_wildcard_values(&Predicate::default(), &props).unwrap();
        assert!(none.values.is_empty());
    }

    #[test]
    fn build_key_canonical_example() {
        let t = sq1();
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Bool(true))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        let key = build_key(&t, VertexId(10), we, wl).unwrap();
        assert_eq!(key.rendered, "SQ1:10:IsActive=true&Status=0");
        // determinism
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Bool(true))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        let again = build_key(&t, VertexId(10), we, wl).unwrap();
        assert_eq!(key.rendered, again.rendered);
    }

    #[test]
    fn build_key_no_wildcards() {
        let t = SubQueryTemplate::new(
            "SQT",
            Predicate::default(),
            Predicate::default(),
            Predicate::default(),
            Direction::Out,
        )
        .unwrap();
        let key =
            build_key(&t, VertexId(7), WildcardBinding::default(), WildcardBinding::default())
                .unwrap();
        assert_eq!(key.rendered, "SQT:7:");
    }

    #[test]
    fn binding_mismatch_rejected() {
        let t = sq1();
        let err = build_key(&t, VertexId(10), WildcardBinding::default(), WildcardBinding::default());
        assert!(matches!(err, Err(Error::BindingMismatch(_))));
    }

    #[test]
    fn root_prefix_delimits_ids() {
        let t = sq1();
        let p10 = root_prefix(&t, VertexId(10));
        let p101 = root_prefix(&t, VertexId(101));
        assert_eq!(p10, "SQ1:10:");
        assert!(!p101.starts_with(&p10));
        assert!(!p10.starts_with(&p101));
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Bool(false))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(1))] };
        let key = build_key(&t, VertexId(10), we, wl).unwrap();
        assert!(key.rendered.starts_with(&p10));
    }

    #[test]
    fn key_rendering_injective_for_tricky_strings() {
        let cases = [
            Scalar::Str("true".into()),
            Scalar::Bool(true),
            Scalar::Str("0".into()),
            Scalar::Int(0),
            Scalar::Str("a:b&c%d/e=f".into()),
            Scalar::Str("-12".into()),
            Scalar::Int(-12),
        ];
        let mut seen = std::collections::HashSet::new();
        for c in &cases {
            let r = render_scalar(c);
            assert!(seen.insert(r.clone()), "collision on {r}");
            assert_eq!(&parse_scalar(&r).unwrap(), c);
        }
    }

    #[test]
    fn key_bijective_over_random_instances() {
        use proptest::prelude::*;
        let scalar = prop_oneof![
            any::<bool>().prop_map(Scalar::Bool),
            any::<i64>().prop_map(Scalar::Int),
            "[a-z:&%/=]{0,6}".prop_map(Scalar::Str),
            "(true|false|-?[0-9]{1,4})".prop_map(Scalar::Str),
        ];
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &proptest::collection::vec((0u64..50, scalar.clone(), scalar), 2..30),
                |instances| {
                    let t = sq1();
                    let mut map: std::collections::HashMap<String, (u64, Scalar, Scalar)> =
                        std::collections::HashMap::new();
                    for (root, e, l) in instances {
                        let we =
                            WildcardBinding { values: vec![("IsActive".into(), e.clone())] };
                        let wl = WildcardBinding { values: vec![("Status".into(), l.clone())] };
                        let key = build_key(&t, VertexId(root), we, wl).unwrap();
                        if let Some(prev) = map.get(&key.rendered) {
                            prop_assert_eq!(prev, &(root, e, l));
                        } else {
                            map.insert(key.rendered, (root, e, l));
                        }
                    }
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn parse_key_roundtrip() {
        let t = sq1();
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Str("true".into()))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        let key = build_key(&t, VertexId(42), we, wl).unwrap();
        let (name, root, values) = parse_key(&key.rendered).unwrap();
        assert_eq!(name, "SQ1");
        assert_eq!(root, VertexId(42));
        assert_eq!(
            values,
            vec![
                ("IsActive".to_string(), Scalar::Str("true".into())),
                ("Status".to_string(), Scalar::Int(0)),
            ]
        );
    }

    #[test]
    fn execute_instance_fig1_yields_25_listings() {
        let (graph, _) = fixture::fig1();
        let t = sq1();
        let mut tx = graph.begin(Mode::ReadOnly);
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Bool(true))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        let ids =
            execute_instance(&graph, &mut tx, &t, fixture::WATCH_LIST, &we, &wl).unwrap();
        assert_eq!(ids.len(), 25);
        assert!(ids.contains(&fixture::LISTING_15));
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn execute_instance_root_failing_pred_is_empty() {
        let (graph, _) = fixture::fig1();
        let t = sq1();
        let mut tx = graph.begin(Mode::ReadOnly);
        let we = WildcardBinding { values: vec![("IsActive".into(), Scalar::Bool(true))] };
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        // listing 15 is not a watch-list
        let ids =
            execute_instance(&graph, &mut tx, &t, fixture::LISTING_15, &we, &wl).unwrap();
        assert!(ids.is_empty());
    }

    #[test]
    fn template_with_exact_value_restricts_instances() {
        // a template pinning IsActive=true instead of a wildcard
        let t = SubQueryTemplate::new(
            "SQX",
            Predicate::new(Some("watch-list"), vec![]),
            Predicate::new(
                Some("includes"),
                vec![PropTerm {
                    name: "IsActive".into(),
                    matcher: Matcher::Exact(Scalar::Bool(true)),
                }],
            ),
            Predicate::new(
                None,
                vec![PropTerm { name: "Status".into(), matcher: Matcher::Wildcard }],
            ),
            Direction::Out,
        )
        .unwrap();
        // the key carries only wildcard values
        let wl = WildcardBinding { values: vec![("Status".into(), Scalar::Int(0))] };
        let key = build_key(&t, VertexId(10), WildcardBinding::default(), wl).unwrap();
        assert_eq!(key.rendered, "SQX:10:Status=0");
        // an edge with IsActive=false produces no candidate: Evaluate fails
        let mut props = Properties::new();
        props.insert("IsActive".into(), Scalar::Bool(false));
        assert!(!evaluate(&t.edge_pred, "includes", &props));
    }

    #[test]
    fn evaluate_matches_brute_force() {
        use proptest::prelude::*;
        let scalar = prop_oneof![
            any::<bool>().prop_map(Scalar::Bool),
            (0i64..4).prop_map(Scalar::Int),
        ];
        let term = ("[ab]", prop_oneof![scalar.clone().prop_map(Matcher::Exact), Just(Matcher::Wildcard)])
            .prop_map(|(name, matcher)| PropTerm { name, matcher });
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &(
                    proptest::collection::vec(term, 0..4),
                    proptest::collection::btree_map("[ab]", scalar, 0..3),
                ),
                |(terms, props)| {
                    let pred = Predicate { label_filter: None, terms: terms.clone() };
                    let got = evaluate(&pred, "x", &props);
                    let want = terms.iter().all(|t| match &t.matcher {
                        Matcher::Exact(v) => props.get(&t.name) == Some(v),
                        Matcher::Wildcard => true,
                    });
                    prop_assert_eq!(got, want);
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn parse_template_line() {
        let line = r#"{"name":"SQ1","root":{"label":"watch-list"},"dir":"out","edge":{"label":"includes","props":[{"name":"IsActive","match":"?"}]},"leaf":{"props":[{"name":"Status","match":"?"}]}}"#;
        let t = parse_template(line).unwrap();
        assert_eq!(t, sq1());
    }

    #[test]
    fn registry_flags() {
        let reg = TemplateRegistry::new();
        reg.install(Arc::new(sq1()));
        assert_eq!(reg.flags("SQ1"), Some((false, false)));
        reg.set_invalidate_active("SQ1", true);
        reg.set_read_active("SQ1", true);
        reg.assert_flag_safety();
        assert_eq!(reg.snapshot_read_active().len(), 1);
        reg.set_read_active("SQ1", false);
        assert_eq!(reg.snapshot_read_active().len(), 0);
        assert_eq!(reg.snapshot_invalidate_active().len(), 1);
    }
}
