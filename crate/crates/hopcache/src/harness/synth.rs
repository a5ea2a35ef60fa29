//! Deterministic synthetic graph and template set sized for desk-scale
//! benchmarking, plus a random single-write generator for bound audits.
//! Output is the same newline-delimited JSON the loader ingests, so every
//! benchmark run exercises the external formats.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graphstore::{Direction, Graph, GraphChange, Scalar, VertexId};
use crate::kvstore::{Mode, Transaction};

#[derive(Clone, Copy)]
pub struct SynthSpec {
    pub vertices: u64,
    pub edges: u64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { vertices: 2_000, edges: 10_000, seed: 42 }
    }
}

/// One in ten vertices is a `list` root; the rest are `item` leaves. Lists
/// carry a `Tier`, items carry a `Status` and a unique `sku`. Edges are 70%
/// `includes` (list → item, `IsActive` flag) and 30% `similar` (item → item,
/// `Score`).
pub fn graph_jsonl(spec: SynthSpec) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_lists = (spec.vertices / 10).max(1);
    let mut out = String::new();
    for i in 0..spec.vertices {
        if i < n_lists {
            out.push_str(&format!(
                "{{\"t\":\"v\",\"id\":{i},\"label\":\"list\",\"props\":{{\"name\":\"list-{i}\",\"Tier\":{}}}}}\n",
                rng.gen_range(0..3)
            ));
        } else {
            out.push_str(&format!(
                "{{\"t\":\"v\",\"id\":{i},\"label\":\"item\",\"props\":{{\"Status\":{},\"sku\":{}}}}}\n",
                rng.gen_range(0..3),
                100_000 + i
            ));
        }
    }
    for _ in 0..spec.edges {
        if rng.gen_bool(0.7) {
            let list = rng.gen_range(0..n_lists);
            let item = rng.gen_range(n_lists..spec.vertices);
            out.push_str(&format!(
                "{{\"t\":\"e\",\"out\":{list},\"in\":{item},\"label\":\"includes\",\"props\":{{\"IsActive\":{}}}}}\n",
                rng.gen_bool(0.6)
            ));
        } else {
            let a = rng.gen_range(n_lists..spec.vertices);
            let b = rng.gen_range(n_lists..spec.vertices);
            out.push_str(&format!(
                "{{\"t\":\"e\",\"out\":{a},\"in\":{b},\"label\":\"similar\",\"props\":{{\"Score\":{}}}}}\n",
                rng.gen_range(0..5)
            ));
        }
    }
    out
}

/// Six templates over the synthetic schema: two out-direction, four
/// in-direction, mixing wildcard, exact, and empty predicates.
pub fn templates_jsonl() -> &'static str {
    concat!(
        r#"{"name":"SQ1","root":{"label":"list"},"dir":"out","edge":{"label":"includes","props":[{"name":"IsActive","match":"?"}]},"leaf":{"props":[{"name":"Status","match":"?"}]}}"#,
        "\n",
        r#"{"name":"SQ2","root":{"label":"item"},"dir":"out","edge":{"label":"similar","props":[{"name":"Score","match":"?"}]},"leaf":{}}"#,
        "\n",
        r#"{"name":"SQ3","root":{"label":"item"},"dir":"in","edge":{"label":"includes","props":[{"name":"IsActive","match":"?"}]},"leaf":{"label":"list"}}"#,
        "\n",
        r#"{"name":"SQ4","root":{"label":"item"},"dir":"in","edge":{"label":"similar","props":[{"name":"Score","match":"?"}]},"leaf":{"props":[{"name":"Status","match":"?"}]}}"#,
        "\n",
        r#"{"name":"SQ5","root":{"label":"item"},"dir":"in","edge":{"label":"includes","props":[{"name":"IsActive","match":true}]},"leaf":{"label":"list","props":[{"name":"Tier","match":"?"}]}}"#,
        "\n",
        r#"{"name":"SQ6","root":{"label":"item"},"dir":"in","edge":{"label":"includes"},"leaf":{"label":"list","props":[{"name":"Tier","match":"?"}]}}"#,
        "\n",
    )
}

/// Vertex populations by label, read back from a loaded graph.
pub struct GraphModel {
    pub lists: Vec<VertexId>,
    pub items: Vec<VertexId>,
}

impl GraphModel {
    pub fn scan(graph: &Graph) -> Result<GraphModel> {
        let mut tx = graph.begin(Mode::ReadOnly);
        let mut model = GraphModel { lists: Vec::new(), items: Vec::new() };
        for id in graph.vertex_ids(&mut tx)? {
            if let Some(v) = graph.vertex(&mut tx, id)? {
                match v.label.as_str() {
                    "list" => model.lists.push(id),
                    _ => model.items.push(id),
                }
            }
        }
        Ok(model)
    }
}

/// A change recorder for audits that need the emitted change sequence next to
/// the maintenance reports.
#[derive(Default)]
pub struct ChangeRecorder {
    changes: std::sync::Mutex<Vec<GraphChange>>,
}

impl ChangeRecorder {
    pub fn new() -> std::sync::Arc<Self> {
        std::sync::Arc::new(Self::default())
    }

    pub fn drain(&self) -> Vec<GraphChange> {
        std::mem::take(&mut self.changes.lock().unwrap())
    }
}

impl crate::graphstore::ChangeListener for ChangeRecorder {
    fn on_change(
        &self,
        _graph: &Graph,
        _tx: &mut Transaction,
        change: &GraphChange,
    ) -> Result<()> {
        self.changes.lock().unwrap().push(change.clone());
        Ok(())
    }
}

/// Applies one random structural or property write chosen across all six
/// write types. Returns a short tag naming what was done.
pub fn random_write(
    graph: &Graph,
    tx: &mut Transaction,
    model: &mut GraphModel,
    rng: &mut StdRng,
) -> Result<&'static str> {
    let pick_vertex = |model: &GraphModel, rng: &mut StdRng| -> VertexId {
        if !model.items.is_empty() && (model.lists.is_empty() || rng.gen_bool(0.7)) {
            model.items[rng.gen_range(0..model.items.len())]
        } else {
            model.lists[rng.gen_range(0..model.lists.len())]
        }
    };
    match rng.gen_range(0..100) {
        0..=9 => {
            let id = graph.add_vertex(
                tx,
                "item",
                [("Status".to_string(), Scalar::Int(rng.gen_range(0..3)))].into_iter().collect(),
            )?;
            model.items.push(id);
            Ok("add-vertex")
        }
        10..=17 => {
            // delete from the tail so later picks stay valid
            let id = if rng.gen_bool(0.8) && model.items.len() > 1 {
                model.items.swap_remove(rng.gen_range(0..model.items.len()))
            } else if model.lists.len() > 1 {
                model.lists.swap_remove(rng.gen_range(0..model.lists.len()))
            } else {
                return Ok("skip");
            };
            graph.delete_vertex(tx, id)?;
            Ok("delete-vertex")
        }
        18..=42 => {
            let (label, out, props) = if rng.gen_bool(0.7) && !model.lists.is_empty() {
                (
                    "includes",
                    model.lists[rng.gen_range(0..model.lists.len())],
                    [("IsActive".to_string(), Scalar::Bool(rng.gen_bool(0.6)))],
                )
            } else {
                (
                    "similar",
                    pick_vertex(model, rng),
                    [("Score".to_string(), Scalar::Int(rng.gen_range(0..5)))],
                )
            };
            let to = model.items[rng.gen_range(0..model.items.len())];
            graph.add_edge(tx, out, to, label, props.into_iter().collect())?;
            Ok("add-edge")
        }
        43..=62 => {
            let v = pick_vertex(model, rng);
            let edges = graph.incident_edges(tx, v, Direction::Both, None)?;
            if let Some(e) = edges.first() {
                graph.delete_edge(tx, e.id, v)?;
                Ok("delete-edge")
            } else {
                Ok("skip")
            }
        }
        63..=81 => {
            let v = pick_vertex(model, rng);
            let (prop, value) = if rng.gen_bool(0.5) {
                ("Status", Some(Scalar::Int(rng.gen_range(0..3))))
            } else if rng.gen_bool(0.5) {
                ("Tier", Some(Scalar::Int(rng.gen_range(0..3))))
            } else {
                ("Status", None)
            };
            graph.set_vertex_property(tx, v, prop, value)?;
            Ok("vertex-prop")
        }
        _ => {
            let v = pick_vertex(model, rng);
            let edges = graph.incident_edges(tx, v, Direction::Both, None)?;
            if let Some(e) = edges.first() {
                let endpoint = if e.out_vertex == v { v } else { e.in_vertex };
                let (prop, value) = match rng.gen_range(0..3) {
                    0 => ("IsActive", Some(Scalar::Bool(rng.gen_bool(0.5)))),
                    1 => ("Score", Some(Scalar::Int(rng.gen_range(0..5)))),
                    _ => ("IsActive", None),
                };
                graph.set_edge_property(tx, e.id, endpoint, prop, value)?;
                Ok("edge-prop")
            } else {
                Ok("skip")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::engine::{Engine, EngineConfig};

    #[test]
    fn synth_graph_loads_with_exact_counts() {
        let spec = SynthSpec { vertices: 300, edges: 900, seed: 7 };
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        let (v, ed) = e.load_graph(&graph_jsonl(spec)).unwrap();
        assert_eq!((v, ed), (300, 900));
        assert_eq!(e.register_and_enable_templates(templates_jsonl()).unwrap(), 6);
        let model = GraphModel::scan(&e.graph).unwrap();
        assert_eq!(model.lists.len(), 30);
        assert_eq!(model.items.len(), 270);
    }

    #[test]
    fn synth_graph_is_deterministic() {
        let spec = SynthSpec { vertices: 100, edges: 200, seed: 3 };
        assert_eq!(graph_jsonl(spec), graph_jsonl(spec));
        let other = SynthSpec { seed: 4, ..spec };
        assert_ne!(graph_jsonl(spec), graph_jsonl(other));
    }
}
