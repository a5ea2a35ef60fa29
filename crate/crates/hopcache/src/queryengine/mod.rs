//! Traversal queries: parse text into a `Traversal`, decompose it into
//! one-hop sub-queries matched against the enabled templates, then execute —
//! consulting the cache for matched hops on the read path, or running
//! cache-bypassing read-modify-write programs on the write path.

pub mod parser;
pub mod rewrite;
pub mod rmw;

pub use parser::{parse, FinalClause, Selector, Step, Traversal};
pub use rewrite::{amdahl_speedup, naive_intersection, rewrite_id_filter, sorted_intersection, UniqueIndex};
pub use rmw::{execute_rmw, RmwOp, RmwOutcome, UpsertEdge};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::cache::{Cache, PopulateQueue, PopulateRequest};
use crate::error::{Error, Result};
use crate::graphstore::{Direction, Graph, Properties, Scalar, Vertex, VertexId};
use crate::kvstore::Transaction;
use crate::templates::{
    build_key, evaluate_vertex, Matcher, SubQueryTemplate, WildcardBinding,
};

/// One parsed edge-traversal hop: the edge step plus the filters on the edge
/// and on the far vertex, in normalized form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HopShape {
    pub direction: Direction,
    pub edge_label: String,
    pub edge_terms: Vec<(String, Scalar)>,
    pub edge_not_terms: Vec<(String, Scalar)>,
    pub leaf_label: Option<String>,
    pub leaf_terms: Vec<(String, Scalar)>,
    pub leaf_not_terms: Vec<(String, Scalar)>,
    /// (equal?, id) comparisons produced by the id-filter rewrite.
    pub leaf_id_filters: Vec<(bool, VertexId)>,
}

impl Default for Direction {
    fn default() -> Self {
        Direction::Out
    }
}

#[derive(Debug, Clone)]
pub struct HopMatch {
    pub template: Arc<SubQueryTemplate>,
    pub edge_values: WildcardBinding,
    pub leaf_values: WildcardBinding,
}

#[derive(Debug, Clone)]
pub struct PlannedHop {
    pub shape: HopShape,
    pub matched: Option<HopMatch>,
}

/// Filters applied to the start set before the first hop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RootFilter {
    pub label: Option<String>,
    pub terms: Vec<(String, Scalar)>,
    pub not_terms: Vec<(String, Scalar)>,
    pub id_filters: Vec<(bool, VertexId)>,
}

impl RootFilter {
    fn is_empty(&self) -> bool {
        *self == RootFilter::default()
    }
}

#[derive(Debug, Clone)]
pub struct QueryPlan {
    pub start: Selector,
    pub root_filter: RootFilter,
    pub hops: Vec<PlannedHop>,
    pub final_clause: FinalClause,
}

fn filter_vertex(
    v: &Vertex,
    label: &Option<String>,
    terms: &[(String, Scalar)],
    not_terms: &[(String, Scalar)],
    id_filters: &[(bool, VertexId)],
) -> bool {
    if let Some(l) = label {
        if *l != v.label {
            return false;
        }
    }
    terms.iter().all(|(n, val)| v.properties.get(n) == Some(val))
        && not_terms.iter().all(|(n, val)| v.properties.get(n) != Some(val))
        && id_filters.iter().all(|&(eq, id)| if eq { v.id == id } else { v.id != id })
}

/// Groups the flat step list into root filters and hops, validating the
/// edge-step/vertex-step pairing.
fn shape(traversal: &Traversal) -> Result<(RootFilter, Vec<HopShape>)> {
    enum Phase {
        Root,
        Edge,
        Leaf,
    }
    let mut root = RootFilter::default();
    let mut hops: Vec<HopShape> = Vec::new();
    let mut phase = Phase::Root;
    let bad = |msg: &str| Error::InvalidSpec(format!("traversal shape: {msg}"));

    for step in &traversal.steps {
        match step {
            Step::OutE(l) | Step::InE(l) | Step::BothE(l) => {
                if matches!(phase, Phase::Edge) {
                    return Err(bad("edge step while previous edge lacks its vertex step"));
                }
                hops.push(HopShape {
                    direction: match step {
                        Step::OutE(_) => Direction::Out,
                        Step::InE(_) => Direction::In,
                        _ => Direction::Both,
                    },
                    edge_label: l.clone(),
                    ..Default::default()
                });
                phase = Phase::Edge;
            }
            Step::InV | Step::OutV => {
                let dir = match phase {
                    Phase::Edge => hops.last().unwrap().direction,
                    _ => return Err(bad("vertex step without a preceding edge step")),
                };
                let ok = match (dir, step) {
                    (Direction::Out, Step::InV) => true,
                    (Direction::In, Step::OutV) => true,
                    // after bothE, either spelling means "the other endpoint"
                    (Direction::Both, _) => true,
                    _ => false,
                };
                if !ok {
                    return Err(bad("vertex step does not match the edge direction"));
                }
                phase = Phase::Leaf;
            }
            Step::HasLabel(l) => match phase {
                Phase::Root => {
                    if root.label.replace(l.clone()).is_some() {
                        return Err(bad("repeated hasLabel"));
                    }
                }
                Phase::Leaf => {
                    let hop = hops.last_mut().unwrap();
                    if hop.leaf_label.replace(l.clone()).is_some() {
                        return Err(bad("repeated hasLabel"));
                    }
                }
                Phase::Edge => return Err(bad("hasLabel on an edge; the label is the edge-step argument")),
            },
            Step::Has(n, v) => match phase {
                Phase::Root => root.terms.push((n.clone(), v.clone())),
                Phase::Edge => hops.last_mut().unwrap().edge_terms.push((n.clone(), v.clone())),
                Phase::Leaf => hops.last_mut().unwrap().leaf_terms.push((n.clone(), v.clone())),
            },
            Step::HasNot(n, v) => match phase {
                Phase::Root => root.not_terms.push((n.clone(), v.clone())),
                Phase::Edge => {
                    hops.last_mut().unwrap().edge_not_terms.push((n.clone(), v.clone()))
                }
                Phase::Leaf => {
                    hops.last_mut().unwrap().leaf_not_terms.push((n.clone(), v.clone()))
                }
            },
            Step::IdEq(id) | Step::IdNeq(id) => {
                let eq = matches!(step, Step::IdEq(_));
                match phase {
                    Phase::Root => root.id_filters.push((eq, *id)),
                    Phase::Leaf => hops.last_mut().unwrap().leaf_id_filters.push((eq, *id)),
                    Phase::Edge => return Err(bad("id comparison on an edge")),
                }
            }
        }
    }
    if matches!(phase, Phase::Edge) {
        return Err(bad("traversal ends on an edge step without its vertex step"));
    }
    Ok((root, hops))
}

/// Unifies the query's exact terms with a predicate's terms: every template
/// term must be satisfied (exact values equal, wildcards bound) and the query
/// must carry no term the template does not declare.
fn bind_terms(
    template_terms: &[crate::templates::PropTerm],
    query_terms: &[(String, Scalar)],
) -> Option<WildcardBinding> {
    let mut by_name: BTreeMap<&str, &Scalar> = BTreeMap::new();
    for (n, v) in query_terms {
        match by_name.insert(n, v) {
            Some(prev) if prev != v => return None, // contradictory duplicates
            _ => {}
        }
    }
    if by_name.len() != template_terms.len() {
        return None;
    }
    let mut values = Vec::new();
    for term in template_terms {
        let v = *by_name.get(term.name.as_str())?;
        match &term.matcher {
            Matcher::Exact(want) => {
                if want != v {
                    return None;
                }
            }
            Matcher::Wildcard => values.push((term.name.clone(), v.clone())),
        }
    }
    Some(WildcardBinding { values })
}

fn match_template(shape: &HopShape, t: &Arc<SubQueryTemplate>) -> Option<HopMatch> {
    // negative edge filters cannot be applied to a cached id list
    if !shape.edge_not_terms.is_empty() {
        return None;
    }
    if t.direction != shape.direction
        || t.edge_pred.label_filter.as_deref() != Some(shape.edge_label.as_str())
        || t.leaf_pred.label_filter != shape.leaf_label
    {
        return None;
    }
    let edge_values = bind_terms(&t.edge_pred.terms, &shape.edge_terms)?;
    let leaf_values = bind_terms(&t.leaf_pred.terms, &shape.leaf_terms)?;
    Some(HopMatch { template: t.clone(), edge_values, leaf_values })
}

/// Matches each hop against the enabled templates (first match in name order
/// wins); unmatched hops fall back to direct execution.
pub fn decompose(
    traversal: &Traversal,
    enabled: &[Arc<SubQueryTemplate>],
) -> Result<QueryPlan> {
    let (root_filter, shapes) = shape(traversal)?;
    let hops = shapes
        .into_iter()
        .map(|s| {
            let matched = enabled.iter().find_map(|t| match_template(&s, t));
            PlannedHop { shape: s, matched }
        })
        .collect();
    Ok(QueryPlan {
        start: traversal.start.clone(),
        root_filter,
        hops,
        final_clause: traversal.final_clause,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Values(Vec<(VertexId, Properties)>),
    Count(u64),
    Ids(Vec<VertexId>),
}

impl QueryResult {
    pub fn to_json_line(&self) -> String {
        match self {
            QueryResult::Count(n) => serde_json::json!({ "count": n }).to_string(),
            QueryResult::Ids(ids) => serde_json::json!({ "ids": ids }).to_string(),
            QueryResult::Values(vs) => {
                let items: Vec<_> = vs
                    .iter()
                    .map(|(id, props)| serde_json::json!({ "id": id, "props": props }))
                    .collect();
                serde_json::json!({ "values": items }).to_string()
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Roots executed directly: unmatched hop, cache off, or root outside the
    /// template's root predicate.
    pub fallback_roots: u64,
    /// (hits, misses) broken down by template name.
    pub per_template: BTreeMap<String, (u64, u64)>,
}

pub struct ReadContext<'a> {
    pub graph: &'a Graph,
    pub cache: &'a Cache,
    pub queue: &'a PopulateQueue,
}

fn direct_hop(
    graph: &Graph,
    tx: &mut Transaction,
    root: VertexId,
    shape: &HopShape,
) -> Result<Vec<VertexId>> {
    graph.neighbors(
        tx,
        root,
        shape.direction,
        Some(&shape.edge_label),
        &|e| {
            shape.edge_terms.iter().all(|(n, v)| e.properties.get(n) == Some(v))
                && shape.edge_not_terms.iter().all(|(n, v)| e.properties.get(n) != Some(v))
        },
        &|v| filter_vertex(v, &shape.leaf_label, &shape.leaf_terms, &shape.leaf_not_terms, &shape.leaf_id_filters),
    )
}

/// Executes a planned read within `tx`. Matched hops consult the cache when
/// `use_cache` is set and the root passes the template's root predicate; a
/// miss is answered by a direct scan and enqueued for asynchronous
/// population. Results are ascending-id ordered at every stage.
pub fn execute_read(
    ctx: &ReadContext,
    tx: &mut Transaction,
    plan: &QueryPlan,
    roots: Vec<VertexId>,
    use_cache: bool,
) -> Result<(QueryResult, ReadStats)> {
    let mut stats = ReadStats::default();
    let mut current: Vec<VertexId> = roots;
    current.sort();
    current.dedup();

    if !plan.root_filter.is_empty() {
        let f = &plan.root_filter;
        let mut kept = Vec::new();
        for id in current {
            if let Some(v) = ctx.graph.vertex(tx, id)? {
                if filter_vertex(&v, &f.label, &f.terms, &f.not_terms, &f.id_filters) {
                    kept.push(id);
                }
            }
        }
        current = kept;
    }

    for hop in &plan.hops {
        let mut next: BTreeSet<VertexId> = BTreeSet::new();
        for &root in &current {
            let Some(root_vertex) = ctx.graph.vertex(tx, root)? else { continue };
            let cached_ids: Option<Vec<VertexId>> = match &hop.matched {
                Some(m) if use_cache && evaluate_vertex(&m.template.root_pred, &root_vertex) => {
                    let key = build_key(
                        &m.template,
                        root,
                        m.edge_values.clone(),
                        m.leaf_values.clone(),
                    )?;
                    let entry = match ctx.cache.get_entry(tx, &key.rendered) {
                        Ok(entry) => entry,
                        // treat a corrupt entry as a miss; the populate
                        // overwrites it with a good value
                        Err(Error::MalformedValue(_)) => None,
                        Err(e) => return Err(e),
                    };
                    match entry {
                        Some(ids) => {
                            stats.cache_hits += 1;
                            stats.per_template.entry(m.template.name.clone()).or_default().0 += 1;
                            // post-filters the template does not know about
                            let mut ids: Vec<VertexId> = ids
                                .into_iter()
                                .filter(|&id| {
                                    hop.shape
                                        .leaf_id_filters
                                        .iter()
                                        .all(|&(eq, x)| if eq { id == x } else { id != x })
                                })
                                .collect();
                            if !hop.shape.leaf_not_terms.is_empty() {
                                let mut kept = Vec::new();
                                for id in ids {
                                    if let Some(v) = ctx.graph.vertex(tx, id)? {
                                        if hop
                                            .shape
                                            .leaf_not_terms
                                            .iter()
                                            .all(|(n, val)| v.properties.get(n) != Some(val))
                                        {
                                            kept.push(id);
                                        }
                                    }
                                }
                                ids = kept;
                            }
                            Some(ids)
                        }
                        None => {
                            stats.cache_misses += 1;
                            stats.per_template.entry(m.template.name.clone()).or_default().1 += 1;
                            ctx.queue.enqueue(PopulateRequest {
                                template: m.template.clone(),
                                root,
                                edge_values: m.edge_values.clone(),
                                leaf_values: m.leaf_values.clone(),
                            });
                            None
                        }
                    }
                }
                _ => {
                    stats.fallback_roots += 1;
                    None
                }
            };
            let ids = match cached_ids {
                Some(ids) => ids,
                None => direct_hop(ctx.graph, tx, root, &hop.shape)?,
            };
            next.extend(ids);
        }
        current = next.into_iter().collect();
    }

    let result = match plan.final_clause {
        FinalClause::Count => QueryResult::Count(current.len() as u64),
        FinalClause::Dedup | FinalClause::Id => QueryResult::Ids(current),
        FinalClause::ValueMap => {
            let mut out = Vec::new();
            for id in current {
                if let Some(v) = ctx.graph.vertex(tx, id)? {
                    out.push((id, v.properties));
                }
            }
            QueryResult::Values(out)
        }
    };
    Ok((result, stats))
}

/// Resolves the start selector to a root id set. Aliases are looked up in the
/// caller-maintained table; an unknown alias is an error.
pub fn resolve_start(
    graph: &Graph,
    tx: &mut Transaction,
    start: &Selector,
    aliases: &BTreeMap<String, VertexId>,
) -> Result<Vec<VertexId>> {
    match start {
        Selector::All => graph.vertex_ids(tx),
        Selector::Id(id) => Ok(vec![*id]),
        Selector::Alias(a) => aliases
            .get(a)
            .map(|id| vec![*id])
            .ok_or_else(|| Error::NotFound(format!("alias {a:?}"))),
    }
}
