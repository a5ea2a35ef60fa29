//! Read-modify-write programs. An RMW transaction reads the graph directly —
//! never the cache — so it observes its own partial writes; its mutations
//! drive cache maintenance through the graph's change listeners like any
//! other write. Three production shapes are modeled: upsert a small
//! sub-graph, bump a bookkeeping property, and delete qualifying edges.

use crate::error::Result;
use crate::graphstore::{Direction, Graph, Properties, Scalar, VertexId};
use crate::kvstore::Transaction;

#[derive(Debug, Clone, PartialEq)]
pub struct UpsertEdge {
    pub to: VertexId,
    pub label: String,
    pub props: Properties,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RmwOp {
    /// Bring a root's properties and its outgoing edges to the desired
    /// state, writing only what differs; identical state is a no-op that
    /// emits no changes and impacts no cache entries.
    UpsertSubGraph { root: VertexId, set_props: Properties, edges: Vec<UpsertEdge> },
    /// Set a bookkeeping property no template references.
    UpdateLastSeen { vertex: VertexId, value: i64 },
    /// Drop every edge with the label at the vertex in the direction.
    DeleteEdges { vertex: VertexId, direction: Direction, label: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmwOutcome {
    /// Graph elements actually written (property sets, edge adds/deletes).
    pub mutations: u64,
    /// The subject vertex no longer existed; nothing was done.
    pub skipped_missing: bool,
}

pub fn execute_rmw(graph: &Graph, tx: &mut Transaction, op: &RmwOp) -> Result<RmwOutcome> {
    let mut outcome = RmwOutcome::default();
    match op {
        RmwOp::UpsertSubGraph { root, set_props, edges } => {
            let Some(current) = graph.vertex(tx, *root)? else {
                outcome.skipped_missing = true;
                return Ok(outcome);
            };
            for (name, value) in set_props {
                if current.properties.get(name) != Some(value) {
                    graph.set_vertex_property(tx, *root, name, Some(value.clone()))?;
                    outcome.mutations += 1;
                }
            }
            for want in edges {
                if graph.vertex(tx, want.to)?.is_none() {
                    continue;
                }
                let existing = graph
                    .incident_edges(tx, *root, Direction::Out, Some(&want.label))?
                    .into_iter()
                    .find(|e| e.in_vertex == want.to);
                match existing {
                    Some(edge) => {
                        for (name, value) in &want.props {
                            if edge.properties.get(name) != Some(value) {
                                graph.set_edge_property(
                                    tx,
                                    edge.id,
                                    *root,
                                    name,
                                    Some(value.clone()),
                                )?;
                                outcome.mutations += 1;
                            }
                        }
                    }
                    None => {
                        graph.add_edge(tx, *root, want.to, &want.label, want.props.clone())?;
                        outcome.mutations += 1;
                    }
                }
            }
        }
        RmwOp::UpdateLastSeen { vertex, value } => {
            let Some(current) = graph.vertex(tx, *vertex)? else {
                outcome.skipped_missing = true;
                return Ok(outcome);
            };
            if current.properties.get("last-seen") != Some(&Scalar::Int(*value)) {
                graph.set_vertex_property(tx, *vertex, "last-seen", Some(Scalar::Int(*value)))?;
                outcome.mutations += 1;
            }
        }
        RmwOp::DeleteEdges { vertex, direction, label } => {
            if graph.vertex(tx, *vertex)?.is_none() {
                outcome.skipped_missing = true;
                return Ok(outcome);
            }
            for edge in graph.incident_edges(tx, *vertex, *direction, Some(label))? {
                graph.delete_edge(tx, edge.id, *vertex)?;
                outcome.mutations += 1;
            }
        }
    }
    Ok(outcome)
}
