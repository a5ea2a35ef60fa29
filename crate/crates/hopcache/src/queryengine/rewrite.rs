//! Query-rewrite rules: replace filters on unique user-defined properties
//! with built-in id comparisons, and intersect id lists by sort-and-merge
//! instead of nested scans. Both are pure result-preserving transformations;
//! the naive intersection is retained as a complexity oracle.

use std::cell::Cell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graphstore::{Graph, Scalar, VertexId};
use crate::kvstore::Transaction;

use super::parser::{Step, Traversal};

/// Index over properties declared unique: (property, value) → the single
/// vertex carrying it. Built by a full vertex scan at a snapshot.
pub struct UniqueIndex {
    map: BTreeMap<(String, Scalar), VertexId>,
}

impl UniqueIndex {
    pub fn build(graph: &Graph, tx: &mut Transaction, unique_props: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for id in graph.vertex_ids(tx)? {
            let Some(v) = graph.vertex(tx, id)? else { continue };
            for &p in unique_props {
                if let Some(val) = v.properties.get(p) {
                    if map.insert((p.to_string(), val.clone()), id).is_some() {
                        return Err(Error::InvalidSpec(format!(
                            "property {p:?} declared unique but value {val:?} is shared"
                        )));
                    }
                }
            }
        }
        Ok(UniqueIndex { map })
    }

    pub fn lookup(&self, prop: &str, value: &Scalar) -> Option<VertexId> {
        self.map.get(&(prop.to_string(), value.clone())).copied()
    }
}

/// Rewrite rule 1: a vertex-position `has`/`hasNot` on a unique property
/// whose value the index resolves becomes a built-in id comparison, removing
/// the per-vertex property fetch. Edge-position filters and unresolvable
/// values are left untouched.
pub fn rewrite_id_filter(traversal: &Traversal, index: &UniqueIndex) -> Traversal {
    let mut out = traversal.clone();
    let mut on_edge = false;
    for step in &mut out.steps {
        match step {
            Step::OutE(_) | Step::InE(_) | Step::BothE(_) => on_edge = true,
            Step::InV | Step::OutV => on_edge = false,
            Step::Has(p, v) if !on_edge => {
                if let Some(id) = index.lookup(p, v) {
                    *step = Step::IdEq(id);
                }
            }
            Step::HasNot(p, v) if !on_edge => {
                if let Some(id) = index.lookup(p, v) {
                    *step = Step::IdNeq(id);
                }
            }
            _ => {}
        }
    }
    out
}

/// Rewrite rule 2: sort both lists, then merge. Returns the sorted
/// duplicate-free intersection and the number of element comparisons
/// (sorting comparisons included).
pub fn sorted_intersection(a: &[VertexId], b: &[VertexId]) -> (Vec<VertexId>, u64) {
    let comparisons = Cell::new(0u64);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let counting = |x: &VertexId, y: &VertexId| {
        comparisons.set(comparisons.get() + 1);
        x.cmp(y)
    };
    a.sort_by(counting);
    b.sort_by(counting);

    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        comparisons.set(comparisons.get() + 1);
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                if out.last() != Some(&a[i]) {
                    out.push(a[i]);
                }
                i += 1;
                j += 1;
            }
        }
    }
    (out, comparisons.get())
}

/// The unsorted baseline: membership scan of `b` for every element of `a`.
/// Kept as the complexity oracle for the rewrite.
pub fn naive_intersection(a: &[VertexId], b: &[VertexId]) -> (Vec<VertexId>, u64) {
    let mut comparisons = 0u64;
    let mut out = Vec::new();
    for x in a {
        for y in b {
            comparisons += 1;
            if x == y {
                out.push(*x);
                break;
            }
        }
    }
    out.sort();
    out.dedup();
    (out, comparisons)
}

/// S = 1 / ((1 - f) + f / k): the overall speedup when a fraction `f` of the
/// work is accelerated by a factor `k`.
pub fn amdahl_speedup(f: f64, k: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) || k <= 0.0 {
        return Err(Error::InvalidSpec(format!(
            "amdahl_speedup requires 0 <= f <= 1 and k > 0, got f={f}, k={k}"
        )));
    }
    Ok(1.0 / ((1.0 - f) + f / k))
}
