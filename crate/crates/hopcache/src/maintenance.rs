//! Cache maintenance under graph writes. A `Maintainer` subscribes to the
//! graph's change stream and, inside the mutating transaction, either deletes
//! the impacted cache entries (write-around) or edits their values in place
//! (write-through, with a lazy or pro-active refill of missing entries).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::cache::Cache;
use crate::error::{Error, Result};
use crate::graphstore::{
    ChangeListener, Direction, Edge, Graph, GraphChange, Vertex, VertexId,
};
use crate::kvstore::Transaction;
use crate::templates::{
    build_key, evaluate_edge, evaluate_vertex, execute_instance, extract_wildcard_values,
    has_all_wildcards, root_prefix, SubQueryTemplate, TemplateRegistry, WildcardBinding,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefillMode {
    Lazy,
    Proactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaintenancePolicy {
    WriteAround,
    WriteThrough { refill: RefillMode },
}

impl MaintenancePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "write-around" => Ok(MaintenancePolicy::WriteAround),
            "write-through" | "write-through:lazy" => {
                Ok(MaintenancePolicy::WriteThrough { refill: RefillMode::Lazy })
            }
            "write-through:proactive" => {
                Ok(MaintenancePolicy::WriteThrough { refill: RefillMode::Proactive })
            }
            other => Err(Error::InvalidSpec(format!("unknown policy {other:?}"))),
        }
    }
}

/// One in-place value edit: which ids were actually removed from and added to
/// the entry. An attempted edit of a missing entry is recorded with empty id
/// lists.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ValueEdit {
    pub key: String,
    pub added: Vec<VertexId>,
    pub removed: Vec<VertexId>,
}

/// What one graph change did to the cache subspace.
#[derive(Debug, Clone, Serialize, Default, PartialEq)]
pub struct ImpactReport {
    pub kind: String,
    pub keys_deleted: Vec<String>,
    pub ranges_cleared: Vec<String>,
    pub values_edited: Vec<ValueEdit>,
    /// Entries recomputed whole by pro-active refill.
    pub entries_refilled: Vec<String>,
}

pub fn change_kind(change: &GraphChange) -> &'static str {
    match change {
        GraphChange::AddVertex { .. } => "add-vertex",
        GraphChange::DeleteVertex { .. } => "delete-vertex",
        GraphChange::AddEdge { .. } => "add-edge",
        GraphChange::DeleteEdge { .. } => "delete-edge",
        GraphChange::VertexPropChange { .. } => "vertex-prop-change",
        GraphChange::EdgePropChange { .. } => "edge-prop-change",
    }
}

/// Checks a report against the per-template impacted-key budget for its
/// change type. `incident_edges` is the changed vertex's incident-edge count
/// (pre-change), bounding leaf-side walks; it is ignored for edge changes.
pub fn impact_bound_check(
    change: &GraphChange,
    incident_edges: u64,
    report: &ImpactReport,
) -> bool {
    let (key_bound, range_bound): (u64, u64) = match change {
        GraphChange::AddVertex { .. } => (0, 0),
        GraphChange::DeleteVertex { .. } => (incident_edges, 1),
        GraphChange::AddEdge { .. } | GraphChange::DeleteEdge { .. } => (2, 0),
        GraphChange::VertexPropChange { .. } => (2 * incident_edges, 1),
        GraphChange::EdgePropChange { old_value, new_value, .. } => {
            // an add or delete of the property touches one edge state, an
            // update touches two
            if old_value.is_some() && new_value.is_some() {
                (4, 0)
            } else {
                (2, 0)
            }
        }
    };

    let mut keys_per_template: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut ranges_per_template: BTreeMap<&str, u64> = BTreeMap::new();
    fn template_of(key: &str) -> &str {
        key.split(':').next().unwrap_or(key)
    }
    for k in report.keys_deleted.iter().chain(report.values_edited.iter().map(|e| &e.key)) {
        keys_per_template.entry(template_of(k)).or_default().insert(k);
    }
    for r in &report.ranges_cleared {
        *ranges_per_template.entry(template_of(r)).or_default() += 1;
    }
    keys_per_template.values().all(|ks| ks.len() as u64 <= key_bound)
        && ranges_per_template.values().all(|&n| n <= range_bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafAction {
    Remove,
    Add,
}

struct PlannedKey {
    template: Arc<SubQueryTemplate>,
    root: VertexId,
    edge_values: WildcardBinding,
    leaf_values: WildcardBinding,
    remove: BTreeSet<VertexId>,
    add: BTreeSet<VertexId>,
}

/// Accumulated per-change actions, deduplicated on rendered key bytes before
/// anything is applied.
#[derive(Default)]
struct Plan {
    ranges: BTreeSet<String>,
    keys: BTreeMap<String, PlannedKey>,
    /// (template, root) pairs whose entries may need pro-active recomputation
    /// after a root-prefix clear.
    refill_roots: Vec<(Arc<SubQueryTemplate>, VertexId)>,
}

impl Plan {
    fn key(
        &mut self,
        template: &Arc<SubQueryTemplate>,
        root: VertexId,
        edge_values: WildcardBinding,
        leaf_values: WildcardBinding,
        action: LeafAction,
        leaf: VertexId,
    ) -> Result<()> {
        let rendered =
            build_key(template, root, edge_values.clone(), leaf_values.clone())?.rendered;
        let entry = self.keys.entry(rendered).or_insert_with(|| PlannedKey {
            template: template.clone(),
            root,
            edge_values,
            leaf_values,
            remove: BTreeSet::new(),
            add: BTreeSet::new(),
        });
        match action {
            LeafAction::Remove => entry.remove.insert(leaf),
            LeafAction::Add => entry.add.insert(leaf),
        };
        Ok(())
    }
}

pub struct Maintainer {
    registry: Arc<TemplateRegistry>,
    cache: Arc<Cache>,
    policy: MaintenancePolicy,
    reports: Mutex<Vec<ImpactReport>>,
}

impl Maintainer {
    pub fn new(
        registry: Arc<TemplateRegistry>,
        cache: Arc<Cache>,
        policy: MaintenancePolicy,
    ) -> Arc<Self> {
        Arc::new(Maintainer { registry, cache, policy, reports: Mutex::new(Vec::new()) })
    }

    pub fn policy(&self) -> MaintenancePolicy {
        self.policy
    }

    /// Reports of all changes handled since the previous drain, in change
    /// order. Includes changes in transactions that later aborted; callers
    /// that care should drain per committed transaction.
    pub fn drain_reports(&self) -> Vec<ImpactReport> {
        std::mem::take(&mut self.reports.lock().unwrap())
    }

    fn far_vertex(edge: &Edge, near: VertexId) -> VertexId {
        if edge.out_vertex == near {
            edge.in_vertex
        } else {
            edge.out_vertex
        }
    }

    /// Walks the reverse-direction edges of a (possibly hypothetical) leaf
    /// state and plans an action on every key whose instance contains it.
    fn leaf_walk(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        template: &Arc<SubQueryTemplate>,
        leaf: &Vertex,
        action: LeafAction,
        plan: &mut Plan,
    ) -> Result<()> {
        if !has_all_wildcards(&template.leaf_pred, &leaf.properties)
            || !evaluate_vertex(&template.leaf_pred, leaf)
        {
            return Ok(());
        }
        let leaf_values = extract_wildcard_values(&template.leaf_pred, &leaf.properties)?;
        let reverse = match template.direction {
            Direction::Out => Direction::In,
            Direction::In => Direction::Out,
            Direction::Both => Direction::Both,
        };
        for edge in graph.incident_edges(tx, leaf.id, reverse, template.edge_label())? {
            if !has_all_wildcards(&template.edge_pred, &edge.properties)
                || !evaluate_edge(&template.edge_pred, &edge)
            {
                continue;
            }
            let edge_values = extract_wildcard_values(&template.edge_pred, &edge.properties)?;
            let root_id = Self::far_vertex(&edge, leaf.id);
            let Some(root) = graph.vertex(tx, root_id)? else { continue };
            if !evaluate_vertex(&template.root_pred, &root) {
                continue;
            }
            plan.key(template, root_id, edge_values, leaf_values.clone(), action, leaf.id)?;
        }
        Ok(())
    }

    /// Plans actions for an edge in a given (possibly hypothetical) state:
    /// at most one key per candidate (root, leaf) pair, at most two pairs.
    fn handle_edge_change(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        template: &Arc<SubQueryTemplate>,
        edge: &Edge,
        action: LeafAction,
        plan: &mut Plan,
    ) -> Result<()> {
        if !has_all_wildcards(&template.edge_pred, &edge.properties)
            || !evaluate_edge(&template.edge_pred, edge)
        {
            return Ok(());
        }
        if let Some(label) = template.edge_label() {
            if label != edge.label {
                return Ok(());
            }
        }
        let edge_values = extract_wildcard_values(&template.edge_pred, &edge.properties)?;
        let mut candidates: Vec<(VertexId, VertexId)> = Vec::new();
        if matches!(template.direction, Direction::Out | Direction::Both) {
            candidates.push((edge.out_vertex, edge.in_vertex));
        }
        if matches!(template.direction, Direction::In | Direction::Both) {
            candidates.push((edge.in_vertex, edge.out_vertex));
        }
        for (root_id, leaf_id) in candidates {
            let Some(leaf) = graph.vertex(tx, leaf_id)? else { continue };
            if !has_all_wildcards(&template.leaf_pred, &leaf.properties) {
                continue;
            }
            let Some(root) = graph.vertex(tx, root_id)? else { continue };
            if !evaluate_vertex(&template.root_pred, &root)
                || !evaluate_vertex(&template.leaf_pred, &leaf)
            {
                continue;
            }
            let leaf_values = extract_wildcard_values(&template.leaf_pred, &leaf.properties)?;
            plan.key(template, root_id, edge_values.clone(), leaf_values, action, leaf_id)?;
        }
        Ok(())
    }

    fn plan_for_change(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        change: &GraphChange,
    ) -> Result<Plan> {
        let mut plan = Plan::default();
        let templates = self.registry.snapshot_invalidate_active();
        match change {
            GraphChange::AddVertex { .. } => {}
            GraphChange::DeleteVertex { vertex } => {
                for t in &templates {
                    if evaluate_vertex(&t.root_pred, vertex) {
                        plan.ranges.insert(root_prefix(t, vertex.id));
                    }
                    // incident edges were already removed (and reported as
                    // delete-edge changes), so this walk is usually empty;
                    // kept for callers emitting a bare vertex deletion
                    self.leaf_walk(graph, tx, t, vertex, LeafAction::Remove, &mut plan)?;
                }
            }
            GraphChange::AddEdge { edge } => {
                for t in &templates {
                    self.handle_edge_change(graph, tx, t, edge, LeafAction::Add, &mut plan)?;
                }
            }
            GraphChange::DeleteEdge { edge } => {
                for t in &templates {
                    self.handle_edge_change(graph, tx, t, edge, LeafAction::Remove, &mut plan)?;
                }
            }
            GraphChange::VertexPropChange { old_vertex, new_vertex, prop, .. } => {
                for t in &templates {
                    if t.root_pred.references(prop)
                        && (evaluate_vertex(&t.root_pred, old_vertex)
                            || evaluate_vertex(&t.root_pred, new_vertex))
                    {
                        plan.ranges.insert(root_prefix(t, old_vertex.id));
                        if evaluate_vertex(&t.root_pred, new_vertex) {
                            plan.refill_roots.push((t.clone(), new_vertex.id));
                        }
                    }
                    if t.leaf_pred.references(prop) {
                        self.leaf_walk(graph, tx, t, old_vertex, LeafAction::Remove, &mut plan)?;
                        self.leaf_walk(graph, tx, t, new_vertex, LeafAction::Add, &mut plan)?;
                    }
                }
            }
            GraphChange::EdgePropChange { old_edge, new_edge, prop, .. } => {
                for t in &templates {
                    if !t.edge_pred.references(prop) {
                        continue;
                    }
                    self.handle_edge_change(graph, tx, t, old_edge, LeafAction::Remove, &mut plan)?;
                    self.handle_edge_change(graph, tx, t, new_edge, LeafAction::Add, &mut plan)?;
                }
            }
        }
        Ok(plan)
    }

    /// All wildcard-binding combinations observed in a root's current
    /// neighborhood, one per distinct cache key.
    fn observed_bindings(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        template: &Arc<SubQueryTemplate>,
        root: VertexId,
    ) -> Result<BTreeMap<String, (WildcardBinding, WildcardBinding)>> {
        let mut out = BTreeMap::new();
        for edge in graph.incident_edges(tx, root, template.direction, template.edge_label())? {
            if !has_all_wildcards(&template.edge_pred, &edge.properties)
                || !evaluate_edge(&template.edge_pred, &edge)
            {
                continue;
            }
            let edge_values = extract_wildcard_values(&template.edge_pred, &edge.properties)?;
            let leaf_id = Self::far_vertex(&edge, root);
            let Some(leaf) = graph.vertex(tx, leaf_id)? else { continue };
            if !has_all_wildcards(&template.leaf_pred, &leaf.properties)
                || !evaluate_vertex(&template.leaf_pred, &leaf)
            {
                continue;
            }
            let leaf_values = extract_wildcard_values(&template.leaf_pred, &leaf.properties)?;
            let rendered =
                build_key(template, root, edge_values.clone(), leaf_values.clone())?.rendered;
            out.insert(rendered, (edge_values, leaf_values));
        }
        Ok(out)
    }

    /// Parallel edges between the same endpoints can each derive the same
    /// (key, leaf) pair. A planned removal triggered by one edge must not
    /// drop the leaf while another edge still derives it under the same
    /// wildcard binding, so check the post-change neighborhood first.
    fn still_derivable(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        planned: &PlannedKey,
        leaf_id: VertexId,
    ) -> Result<bool> {
        let t = &planned.template;
        let Some(leaf) = graph.vertex(tx, leaf_id)? else { return Ok(false) };
        if !has_all_wildcards(&t.leaf_pred, &leaf.properties)
            || !evaluate_vertex(&t.leaf_pred, &leaf)
            || extract_wildcard_values(&t.leaf_pred, &leaf.properties)? != planned.leaf_values
        {
            return Ok(false);
        }
        for edge in graph.incident_edges(tx, planned.root, t.direction, t.edge_label())? {
            if Self::far_vertex(&edge, planned.root) != leaf_id {
                continue;
            }
            if has_all_wildcards(&t.edge_pred, &edge.properties)
                && evaluate_edge(&t.edge_pred, &edge)
                && extract_wildcard_values(&t.edge_pred, &edge.properties)? == planned.edge_values
            {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn refill(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        template: &Arc<SubQueryTemplate>,
        root: VertexId,
        edge_values: &WildcardBinding,
        leaf_values: &WildcardBinding,
        rendered: &str,
    ) -> Result<()> {
        let ids = execute_instance(graph, tx, template, root, edge_values, leaf_values)?;
        self.cache.put_entry(tx, rendered, &ids)
    }

    fn apply(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        plan: Plan,
        kind: &'static str,
    ) -> Result<ImpactReport> {
        let mut report = ImpactReport { kind: kind.to_string(), ..Default::default() };
        for prefix in &plan.ranges {
            let mut range = crate::cache::CACHE_SUBSPACE.to_vec();
            range.extend_from_slice(prefix.as_bytes());
            tx.clear_range(&range)?;
            report.ranges_cleared.push(prefix.clone());
        }
        let proactive =
            self.policy == MaintenancePolicy::WriteThrough { refill: RefillMode::Proactive };
        match self.policy {
            MaintenancePolicy::WriteAround => {
                for rendered in plan.keys.keys() {
                    self.cache.delete_entry(tx, rendered)?;
                    report.keys_deleted.push(rendered.clone());
                }
            }
            MaintenancePolicy::WriteThrough { .. } => {
                for (rendered, planned) in &plan.keys {
                    match self.cache.read_chunks(tx, rendered)? {
                        None => {
                            if proactive && !planned.add.is_empty() {
                                self.refill(
                                    graph,
                                    tx,
                                    &planned.template,
                                    planned.root,
                                    &planned.edge_values,
                                    &planned.leaf_values,
                                    rendered,
                                )?;
                                report.entries_refilled.push(rendered.clone());
                            } else {
                                report.values_edited.push(ValueEdit {
                                    key: rendered.clone(),
                                    added: vec![],
                                    removed: vec![],
                                });
                            }
                        }
                        Some(bytes) => match self.cache.decode(&bytes) {
                            Ok(ids) => {
                                let mut set: BTreeSet<VertexId> = ids.into_iter().collect();
                                let mut removed = Vec::new();
                                let mut added = Vec::new();
                                for id in &planned.remove {
                                    if planned.add.contains(id)
                                        || !set.contains(id)
                                        || self.still_derivable(graph, tx, planned, *id)?
                                    {
                                        continue;
                                    }
                                    set.remove(id);
                                    removed.push(*id);
                                }
                                for id in &planned.add {
                                    if !planned.remove.contains(id) && set.insert(*id) {
                                        added.push(*id);
                                    }
                                }
                                if !removed.is_empty() || !added.is_empty() {
                                    let ids: Vec<VertexId> = set.into_iter().collect();
                                    self.cache.put_entry(tx, rendered, &ids)?;
                                }
                                report.values_edited.push(ValueEdit {
                                    key: rendered.clone(),
                                    added,
                                    removed,
                                });
                            }
                            Err(Error::MalformedValue(_)) => {
                                // self-heal: drop the corrupt entry
                                self.cache.delete_entry(tx, rendered)?;
                                report.keys_deleted.push(rendered.clone());
                            }
                            Err(e) => return Err(e),
                        },
                    }
                }
                if proactive {
                    for (template, root) in &plan.refill_roots {
                        for (rendered, (we, wl)) in
                            self.observed_bindings(graph, tx, template, *root)?
                        {
                            self.refill(graph, tx, template, *root, &we, &wl, &rendered)?;
                            report.entries_refilled.push(rendered);
                        }
                    }
                }
            }
        }
        Ok(report)
    }

    /// Runs one change through plan + apply; exposed for tests that want the
    /// report directly.
    pub fn handle(
        &self,
        graph: &Graph,
        tx: &mut Transaction,
        change: &GraphChange,
    ) -> Result<ImpactReport> {
        let plan = self.plan_for_change(graph, tx, change)?;
        self.apply(graph, tx, plan, change_kind(change))
    }
}

impl ChangeListener for Maintainer {
    fn on_change(&self, graph: &Graph, tx: &mut Transaction, change: &GraphChange) -> Result<()> {
        let report = self.handle(graph, tx, change)?;
        self.reports.lock().unwrap().push(report);
        Ok(())
    }
}
