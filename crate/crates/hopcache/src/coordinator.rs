//! The service coordinator: a deterministic single-process simulation of the
//! template life-cycle protocol across N query-processor nodes. Each node is
//! a real `TemplateRegistry` (the same type the query engine reads its flags
//! from); the nodes share one store. Control messages are delivered through
//! an injectable fault schedule so the two-phase enable/disable workflow can
//! be model-checked under message loss.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cache::template_prefix;
use crate::error::{Error, Result};
use crate::kvstore::{Mode, Store};
use crate::templates::{SubQueryTemplate, TemplateRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LifecycleState {
    Registered,
    Installed,
    Enabled,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    Install,
    ActivateReads,
    DeactivateReads,
    DeactivateInvalidation,
}

/// What happens to one delivery attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Request lost before reaching the node: no state change, no ack.
    DropRequest,
    /// Request applied but the reply lost: state changed, coordinator
    /// retries anyway.
    DropAck,
}

/// Per-(node, message-kind) queues of attempt faults; an exhausted queue
/// delivers successfully. `drop_all` starves every edge instead, for
/// liveness tests.
#[derive(Debug, Clone, Default)]
pub struct FaultSchedule {
    pub per_edge: BTreeMap<(usize, MessageKind), Vec<Fault>>,
    pub drop_all: bool,
}

impl FaultSchedule {
    fn next(&mut self, node: usize, kind: MessageKind) -> Option<Fault> {
        if self.drop_all {
            return Some(Fault::DropRequest);
        }
        match self.per_edge.get_mut(&(node, kind)) {
            Some(q) if !q.is_empty() => Some(q.remove(0)),
            _ => None,
        }
    }
}

/// Attempts per edge before a starved broadcast reports a stall instead of
/// spinning forever.
const STALL_LIMIT: u32 = 16;

pub struct Cluster {
    store: Arc<Store>,
    nodes: Vec<Arc<TemplateRegistry>>,
    states: BTreeMap<String, (Arc<SubQueryTemplate>, LifecycleState)>,
    /// Removed templates, retained for auditing.
    pub removed: Vec<String>,
    /// Every state transition taken, in order.
    pub transitions: Vec<(String, LifecycleState)>,
    /// Simulated time: one tick per delivery attempt.
    pub ticks: u64,
    /// Number of delivery points at which some node violated
    /// read_active ⇒ invalidate_active. Stays zero or the protocol is broken.
    pub safety_violations: u64,
}

impl Cluster {
    pub fn new(store: Arc<Store>, node_count: usize) -> Self {
        Cluster {
            store,
            nodes: (0..node_count).map(|_| TemplateRegistry::new()).collect(),
            states: BTreeMap::new(),
            removed: Vec::new(),
            transitions: Vec::new(),
            ticks: 0,
            safety_violations: 0,
        }
    }

    pub fn node(&self, i: usize) -> &Arc<TemplateRegistry> {
        &self.nodes[i]
    }

    pub fn state(&self, name: &str) -> Option<LifecycleState> {
        self.states.get(name).map(|(_, s)| *s)
    }

    pub fn safety_holds(&self) -> bool {
        self.nodes.iter().all(|n| {
            self.states.keys().all(|name| match n.flags(name) {
                Some((read, invalidate)) => !read || invalidate,
                None => true,
            })
        })
    }

    fn check_safety(&mut self) {
        if !self.safety_holds() {
            self.safety_violations += 1;
        }
    }

    fn transition(&mut self, name: &str, to: LifecycleState) {
        self.states.get_mut(name).unwrap().1 = to;
        self.transitions.push((name.to_string(), to));
    }

    /// Applies one control message at one node. Must be idempotent: retries
    /// after a lost ack re-deliver it.
    fn deliver(&mut self, node: usize, kind: MessageKind, name: &str) {
        let registry = self.nodes[node].clone();
        let (template, _) = &self.states[name];
        match kind {
            MessageKind::Install => {
                if !registry.contains(name) {
                    registry.install(template.clone());
                }
                registry.set_invalidate_active(name, true);
            }
            MessageKind::ActivateReads => registry.set_read_active(name, true),
            MessageKind::DeactivateReads => registry.set_read_active(name, false),
            MessageKind::DeactivateInvalidation => registry.set_invalidate_active(name, false),
        }
        self.check_safety();
    }

    /// Sends `kind` to every node, retrying each until acknowledged.
    fn broadcast(
        &mut self,
        kind: MessageKind,
        name: &str,
        schedule: &mut FaultSchedule,
    ) -> Result<()> {
        for node in 0..self.nodes.len() {
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > STALL_LIMIT {
                    return Err(Error::InvalidState(format!(
                        "broadcast of {kind:?} to node {node} stalled"
                    )));
                }
                self.ticks += 1;
                match schedule.next(node, kind) {
                    Some(Fault::DropRequest) => continue,
                    Some(Fault::DropAck) => {
                        self.deliver(node, kind, name);
                        continue;
                    }
                    None => {
                        self.deliver(node, kind, name);
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn register_template(&mut self, template: Arc<SubQueryTemplate>) -> Result<LifecycleState> {
        let name = template.name.clone();
        if self.states.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.states.insert(name.clone(), (template, LifecycleState::Registered));
        self.transitions.push((name, LifecycleState::Registered));
        Ok(LifecycleState::Registered)
    }

    /// Two-phase enable: install + activate invalidation everywhere, then
    /// activate reads everywhere. A node acking phase 1 may delete
    /// not-yet-existing entries; no node reads before its phase-2 message.
    pub fn enable_template(
        &mut self,
        name: &str,
        schedule: &mut FaultSchedule,
    ) -> Result<LifecycleState> {
        match self.state(name) {
            Some(LifecycleState::Registered) | Some(LifecycleState::Installed) => {}
            other => {
                return Err(Error::InvalidState(format!(
                    "enable of {name:?} in state {other:?}"
                )))
            }
        }
        self.broadcast(MessageKind::Install, name, schedule)?;
        self.transition(name, LifecycleState::Installed);
        self.broadcast(MessageKind::ActivateReads, name, schedule)?;
        self.transition(name, LifecycleState::Enabled);
        Ok(LifecycleState::Enabled)
    }

    /// Two-phase disable: stop cached reads everywhere, then stop write
    /// maintenance and reclaim the template's key range.
    pub fn disable_template(
        &mut self,
        name: &str,
        schedule: &mut FaultSchedule,
    ) -> Result<LifecycleState> {
        if self.state(name) != Some(LifecycleState::Enabled) {
            return Err(Error::InvalidState(format!(
                "disable of {name:?} in state {:?}",
                self.state(name)
            )));
        }
        self.broadcast(MessageKind::DeactivateReads, name, schedule)?;
        self.transition(name, LifecycleState::Installed);
        self.broadcast(MessageKind::DeactivateInvalidation, name, schedule)?;
        loop {
            let mut tx = self.store.begin(Mode::ReadWrite);
            tx.clear_range(&template_prefix(name))?;
            match tx.commit() {
                Ok(_) => break,
                Err(Error::Conflict) => continue,
                Err(e) => return Err(e),
            }
        }
        self.transition(name, LifecycleState::Removed);
        self.removed.push(name.to_string());
        Ok(LifecycleState::Removed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    fn cluster(n: usize) -> Cluster {
        Cluster::new(Store::open(), n)
    }

    fn sq1() -> Arc<SubQueryTemplate> {
        Arc::new(fixture::sq1())
    }

    #[test]
    fn faultless_enable_disable_full_cycle() {
        let mut c = cluster(3);
        assert_eq!(c.register_template(sq1()).unwrap(), LifecycleState::Registered);
        let mut s = FaultSchedule::default();
        assert_eq!(c.enable_template("SQ1", &mut s).unwrap(), LifecycleState::Enabled);
        // minimal rounds: one attempt per node per phase
        assert_eq!(c.ticks, 6);
        for i in 0..3 {
            assert_eq!(c.node(i).flags("SQ1"), Some((true, true)));
        }
        assert_eq!(c.disable_template("SQ1", &mut s).unwrap(), LifecycleState::Removed);
        for i in 0..3 {
            assert_eq!(c.node(i).flags("SQ1"), Some((false, false)));
        }
        assert_eq!(c.removed, vec!["SQ1"]);
        assert_eq!(c.safety_violations, 0);
        assert_eq!(
            c.transitions,
            vec![
                ("SQ1".to_string(), LifecycleState::Registered),
                ("SQ1".to_string(), LifecycleState::Installed),
                ("SQ1".to_string(), LifecycleState::Enabled),
                ("SQ1".to_string(), LifecycleState::Installed),
                ("SQ1".to_string(), LifecycleState::Removed),
            ]
        );
    }

    #[test]
    fn duplicate_register_rejected() {
        let mut c = cluster(1);
        c.register_template(sq1()).unwrap();
        assert!(matches!(c.register_template(sq1()), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn disable_of_never_enabled_rejected() {
        let mut c = cluster(1);
        c.register_template(sq1()).unwrap();
        assert!(c.disable_template("SQ1", &mut FaultSchedule::default()).is_err());
    }

    #[test]
    fn dropped_message_is_retried() {
        let mut c = cluster(3);
        c.register_template(sq1()).unwrap();
        let mut s = FaultSchedule::default();
        s.per_edge.insert((1, MessageKind::Install), vec![Fault::DropRequest]);
        s.per_edge.insert((2, MessageKind::ActivateReads), vec![Fault::DropAck, Fault::DropAck]);
        assert_eq!(c.enable_template("SQ1", &mut s).unwrap(), LifecycleState::Enabled);
        assert_eq!(c.ticks, 6 + 3);
        assert_eq!(c.safety_violations, 0);
        for i in 0..3 {
            assert_eq!(c.node(i).flags("SQ1"), Some((true, true)));
        }
    }

    #[test]
    fn drop_everything_never_advances() {
        let mut c = cluster(2);
        c.register_template(sq1()).unwrap();
        let mut s = FaultSchedule { drop_all: true, ..Default::default() };
        assert!(c.enable_template("SQ1", &mut s).is_err());
        assert_eq!(c.state("SQ1"), Some(LifecycleState::Registered));
        for i in 0..2 {
            assert_eq!(c.node(i).flags("SQ1"), None);
        }
    }

    #[test]
    fn removal_clears_template_prefix() {
        let store = Store::open();
        // seed cache keys for two templates
        let mut tx = store.begin(Mode::ReadWrite);
        tx.set(b"C/SQ1:10:IsActive=true&Status=0/000000", b"x").unwrap();
        tx.set(b"C/SQ1:11:IsActive=true&Status=0/000000", b"x").unwrap();
        tx.set(b"C/SQ2:10:A=1/000000", b"x").unwrap();
        tx.commit().unwrap();
        let mut c = Cluster::new(store.clone(), 2);
        c.register_template(sq1()).unwrap();
        let mut s = FaultSchedule::default();
        c.enable_template("SQ1", &mut s).unwrap();
        c.disable_template("SQ1", &mut s).unwrap();
        let mut tx = store.begin(Mode::ReadOnly);
        assert_eq!(tx.range_scan(b"C/SQ1:").unwrap(), vec![]);
        assert_eq!(tx.range_scan(b"C/SQ2:").unwrap().len(), 1);
    }

    #[test]
    fn duplicate_delivery_is_idempotent() {
        let mut c = cluster(1);
        c.register_template(sq1()).unwrap();
        let mut s = FaultSchedule::default();
        c.enable_template("SQ1", &mut s).unwrap();
        let before = c.node(0).flags("SQ1");
        for kind in [MessageKind::Install, MessageKind::ActivateReads] {
            c.deliver(0, kind, "SQ1");
            assert_eq!(c.node(0).flags("SQ1"), before);
        }
        assert_eq!(c.safety_violations, 0);
    }

    /// Exhaustive small-scale model check: 3 nodes, enable then disable, up
    /// to 2 faults on every (node, message-kind) edge. Three passes cover
    /// the distinct per-edge behaviors: late application (request drops),
    /// earliest application (ack drops), and the mixed middle case.
    #[test]
    fn model_check_exhaustive_drops() {
        let kinds = [
            MessageKind::Install,
            MessageKind::ActivateReads,
            MessageKind::DeactivateReads,
            MessageKind::DeactivateInvalidation,
        ];
        let patterns: [fn(u32) -> Vec<Fault>; 3] = [
            |n| vec![Fault::DropRequest; n as usize],
            |n| vec![Fault::DropAck; n as usize],
            |n| match n {
                0 => vec![],
                1 => vec![Fault::DropAck],
                _ => vec![Fault::DropRequest, Fault::DropAck],
            },
        ];
        let nodes = 3usize;
        let edges: Vec<(usize, MessageKind)> =
            (0..nodes).flat_map(|n| kinds.iter().map(move |&k| (n, k))).collect();
        for pattern in patterns {
            // each edge independently drops 0, 1, or 2 messages: 3^12 runs
            let mut runs = 0u64;
            for mask in 0..3u64.pow(edges.len() as u32) {
                let mut s = FaultSchedule::default();
                let mut m = mask;
                for &edge in &edges {
                    let drops = (m % 3) as u32;
                    m /= 3;
                    if drops > 0 {
                        s.per_edge.insert(edge, pattern(drops));
                    }
                }
                let mut c = cluster(nodes);
                c.register_template(sq1()).unwrap();
                c.enable_template("SQ1", &mut s).unwrap();
                c.disable_template("SQ1", &mut s).unwrap();
                assert_eq!(c.safety_violations, 0, "mask {mask}");
                assert_eq!(c.state("SQ1"), Some(LifecycleState::Removed));
                runs += 1;
            }
            assert_eq!(runs, 531_441);
        }
    }
}
