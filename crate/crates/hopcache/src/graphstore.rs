//! Directed property-graph layer over the key-value store.
//!
//! Key layout in the graph subspace:
//!   `G/V/<vid>`            -> vertex record
//!   `G/E/out/<vid>/<eid>`  -> edge record (outgoing adjacency)
//!   `G/E/in/<vid>/<eid>`   -> edge record (incoming adjacency)
//!
//! Edge records are duplicated per direction so a neighborhood expansion in
//! either direction is a single prefix scan. Ids are encoded as fixed-width
//! big-endian u64 so adjacency prefixes are unambiguous.
//!
//! Every mutation emits a structured change event to subscribed listeners,
//! synchronously and inside the mutating transaction, after the mutation has
//! entered the write buffer. Listener writes land in the same buffer and
//! commit atomically with the graph change.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvstore::{Mode, Store, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u64);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u64);

/// Property value. Strings, integers, and booleans cover every shape the
/// cache key scheme renders.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Str(s.to_string())
    }
}
impl From<i64> for Scalar {
    fn from(i: i64) -> Self {
        Scalar::Int(i)
    }
}
impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

pub type Properties = BTreeMap<String, Scalar>;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: VertexId,
    pub label: String,
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    pub out_vertex: VertexId,
    pub in_vertex: VertexId,
    pub label: String,
    pub properties: Properties,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Out,
    In,
    Both,
}

/// A single graph mutation, carrying the pre-change state maintenance needs.
#[derive(Debug, Clone)]
pub enum GraphChange {
    AddVertex { vertex: Vertex },
    /// Pre-deletion snapshot. Incident edges are emitted as separate
    /// `DeleteEdge` changes before this one.
    DeleteVertex { vertex: Vertex },
    AddEdge { edge: Edge },
    DeleteEdge { edge: Edge },
    VertexPropChange {
        old_vertex: Vertex,
        new_vertex: Vertex,
        prop: String,
        old_value: Option<Scalar>,
        new_value: Option<Scalar>,
    },
    EdgePropChange {
        old_edge: Edge,
        new_edge: Edge,
        prop: String,
        old_value: Option<Scalar>,
        new_value: Option<Scalar>,
    },
}

pub trait ChangeListener: Send + Sync {
    fn on_change(&self, graph: &Graph, tx: &mut Transaction, change: &GraphChange) -> Result<()>;
}

/// Read/scan counters used by the hit-accounting instrumentation.
#[derive(Default)]
pub struct OpCounters {
    pub adjacency_scans: AtomicU64,
    pub leaf_vertex_reads: AtomicU64,
}

impl OpCounters {
    pub fn reset(&self) {
        self.adjacency_scans.store(0, Ordering::Relaxed);
        self.leaf_vertex_reads.store(0, Ordering::Relaxed);
    }
}

pub struct Graph {
    store: Arc<Store>,
    next_vertex_id: AtomicU64,
    next_edge_id: AtomicU64,
    listeners: RwLock<Vec<Arc<dyn ChangeListener>>>,
    pub counters: OpCounters,
}

// --- key encoding ---

fn vertex_key(id: VertexId) -> Vec<u8> {
    let mut k = b"G/V/".to_vec();
    k.extend_from_slice(&id.0.to_be_bytes());
    k
}

fn adjacency_prefix(dir: Direction, vid: VertexId) -> Vec<u8> {
    let mut k = match dir {
        Direction::Out => b"G/E/out/".to_vec(),
        Direction::In => b"G/E/in/".to_vec(),
        Direction::Both => unreachable!("both expands to two scans"),
    };
    k.extend_from_slice(&vid.0.to_be_bytes());
    k.push(b'/');
    k
}

fn adjacency_key(dir: Direction, vid: VertexId, eid: EdgeId) -> Vec<u8> {
    let mut k = adjacency_prefix(dir, vid);
    k.extend_from_slice(&eid.0.to_be_bytes());
    k
}

// --- record serialization ---
// Canonical sorted-field binary encoding: label then properties in BTreeMap
// (sorted) order, every field length-prefixed.

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn get_bytes<'a>(input: &mut &'a [u8]) -> Result<&'a [u8]> {
    if input.len() < 4 {
        return Err(Error::MalformedValue("truncated length".into()));
    }
    let len = u32::from_be_bytes(input[..4].try_into().unwrap()) as usize;
    if input.len() < 4 + len {
        return Err(Error::MalformedValue("truncated field".into()));
    }
    let out = &input[4..4 + len];
    *input = &input[4 + len..];
    Ok(out)
}

fn put_scalar(out: &mut Vec<u8>, s: &Scalar) {
    match s {
        Scalar::Bool(b) => {
            out.push(0);
            out.push(*b as u8);
        }
        Scalar::Int(i) => {
            out.push(1);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Scalar::Str(v) => {
            out.push(2);
            put_bytes(out, v.as_bytes());
        }
    }
}

fn get_scalar(input: &mut &[u8]) -> Result<Scalar> {
    let tag = *input.first().ok_or_else(|| Error::MalformedValue("missing scalar tag".into()))?;
    *input = &input[1..];
    match tag {
        0 => {
            let b = *input.first().ok_or_else(|| Error::MalformedValue("truncated bool".into()))?;
            *input = &input[1..];
            Ok(Scalar::Bool(b != 0))
        }
        1 => {
            if input.len() < 8 {
                return Err(Error::MalformedValue("truncated int".into()));
            }
            let i = i64::from_be_bytes(input[..8].try_into().unwrap());
            *input = &input[8..];
            Ok(Scalar::Int(i))
        }
        2 => {
            let b = get_bytes(input)?;
            Ok(Scalar::Str(String::from_utf8_lossy(b).into_owned()))
        }
        t => Err(Error::MalformedValue(format!("unknown scalar tag {t}"))),
    }
}

fn encode_record(label: &str, props: &Properties, extra: &[u64]) -> Vec<u8> {
    let mut out = Vec::new();
    for x in extra {
        out.extend_from_slice(&x.to_be_bytes());
    }
    put_bytes(&mut out, label.as_bytes());
    out.extend_from_slice(&(props.len() as u32).to_be_bytes());
    for (name, value) in props {
        put_bytes(&mut out, name.as_bytes());
        put_scalar(&mut out, value);
    }
    out
}

fn decode_record(mut input: &[u8], extra: usize) -> Result<(Vec<u64>, String, Properties)> {
    let mut extras = Vec::with_capacity(extra);
    for _ in 0..extra {
        if input.len() < 8 {
            return Err(Error::MalformedValue("truncated record header".into()));
        }
        extras.push(u64::from_be_bytes(input[..8].try_into().unwrap()));
        input = &input[8..];
    }
    let label = String::from_utf8_lossy(get_bytes(&mut input)?).into_owned();
    if input.len() < 4 {
        return Err(Error::MalformedValue("truncated property count".into()));
    }
    let count = u32::from_be_bytes(input[..4].try_into().unwrap());
    input = &input[4..];
    let mut props = Properties::new();
    for _ in 0..count {
        let name = String::from_utf8_lossy(get_bytes(&mut input)?).into_owned();
        let value = get_scalar(&mut input)?;
        props.insert(name, value);
    }
    Ok((extras, label, props))
}

fn encode_vertex(v: &Vertex) -> Vec<u8> {
    encode_record(&v.label, &v.properties, &[])
}

fn decode_vertex(id: VertexId, bytes: &[u8]) -> Result<Vertex> {
    let (_, label, properties) = decode_record(bytes, 0)?;
    Ok(Vertex { id, label, properties })
}

fn encode_edge(e: &Edge) -> Vec<u8> {
    encode_record(&e.label, &e.properties, &[e.id.0, e.out_vertex.0, e.in_vertex.0])
}

fn decode_edge(bytes: &[u8]) -> Result<Edge> {
    let (extras, label, properties) = decode_record(bytes, 3)?;
    Ok(Edge {
        id: EdgeId(extras[0]),
        out_vertex: VertexId(extras[1]),
        in_vertex: VertexId(extras[2]),
        label,
        properties,
    })
}

impl Graph {
    pub fn new(store: Arc<Store>) -> Arc<Self> {
        Arc::new(Graph {
            store,
            next_vertex_id: AtomicU64::new(1),
            next_edge_id: AtomicU64::new(1),
            listeners: RwLock::new(Vec::new()),
            counters: OpCounters::default(),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn begin(&self, mode: Mode) -> Transaction {
        self.store.begin(mode)
    }

    /// Listeners run synchronously inside the mutating transaction, in
    /// mutation order.
    pub fn subscribe(&self, listener: Arc<dyn ChangeListener>) {
        self.listeners.write().unwrap().push(listener);
    }

    fn emit(&self, tx: &mut Transaction, change: &GraphChange) -> Result<()> {
        let listeners: Vec<_> = self.listeners.read().unwrap().clone();
        for l in listeners {
            l.on_change(self, tx, change)?;
        }
        Ok(())
    }

    pub fn add_vertex(
        &self,
        tx: &mut Transaction,
        label: &str,
        properties: Properties,
    ) -> Result<VertexId> {
        let id = VertexId(self.next_vertex_id.fetch_add(1, Ordering::SeqCst));
        let vertex = Vertex { id, label: to_owned(label), properties };
        tx.set(&vertex_key(id), &encode_vertex(&vertex))?;
        self.emit(tx, &GraphChange::AddVertex { vertex })?;
        Ok(id)
    }

    pub fn vertex(&self, tx: &mut Transaction, id: VertexId) -> Result<Option<Vertex>> {
        match tx.get(&vertex_key(id))? {
            Some(bytes) => Ok(Some(decode_vertex(id, &bytes)?)),
            None => Ok(None),
        }
    }

    fn require_vertex(&self, tx: &mut Transaction, id: VertexId) -> Result<Vertex> {
        self.vertex(tx, id)?.ok_or_else(|| Error::NotFound(format!("vertex {id}")))
    }

    /// All vertex ids, ascending. Used by full scans (`g.V()` with no selector)
    /// and the consistency oracle.
    pub fn vertex_ids(&self, tx: &mut Transaction) -> Result<Vec<VertexId>> {
        Ok(tx
            .range_scan(b"G/V/")?
            .into_iter()
            .map(|(k, _)| VertexId(u64::from_be_bytes(k[4..12].try_into().unwrap())))
            .collect())
    }

    /// Incident edges of `v` in one or both directions, optionally filtered by
    /// edge label. Counts one adjacency scan per directional prefix scan.
    pub fn incident_edges(
        &self,
        tx: &mut Transaction,
        v: VertexId,
        dir: Direction,
        label: Option<&str>,
    ) -> Result<Vec<Edge>> {
        let mut edges = Vec::new();
        let dirs: &[Direction] = match dir {
            Direction::Both => &[Direction::Out, Direction::In],
            Direction::Out => &[Direction::Out],
            Direction::In => &[Direction::In],
        };
        for d in dirs {
            self.counters.adjacency_scans.fetch_add(1, Ordering::Relaxed);
            for (_, bytes) in tx.range_scan(&adjacency_prefix(*d, v))? {
                let e = decode_edge(&bytes)?;
                if label.map(|l| l == e.label).unwrap_or(true) {
                    edges.push(e);
                }
            }
        }
        // A self-loop appears under both directional prefixes of the same
        // vertex; both-direction scans must not report it twice.
        if dir == Direction::Both {
            edges.sort_by_key(|e| e.id);
            edges.dedup_by_key(|e| e.id);
        }
        Ok(edges)
    }

    pub fn delete_vertex(&self, tx: &mut Transaction, id: VertexId) -> Result<()> {
        let vertex = self.require_vertex(tx, id)?;
        let edges = self.incident_edges(tx, id, Direction::Both, None)?;
        for edge in edges {
            self.remove_edge(tx, &edge)?;
            self.emit(tx, &GraphChange::DeleteEdge { edge })?;
        }
        tx.delete(&vertex_key(id))?;
        self.emit(tx, &GraphChange::DeleteVertex { vertex })?;
        Ok(())
    }

    pub fn add_edge(
        &self,
        tx: &mut Transaction,
        out: VertexId,
        in_: VertexId,
        label: &str,
        properties: Properties,
    ) -> Result<Edge> {
        self.require_vertex(tx, out)?;
        self.require_vertex(tx, in_)?;
        let edge = Edge {
            id: EdgeId(self.next_edge_id.fetch_add(1, Ordering::SeqCst)),
            out_vertex: out,
            in_vertex: in_,
            label: to_owned(label),
            properties,
        };
        self.write_edge(tx, &edge)?;
        self.emit(tx, &GraphChange::AddEdge { edge: edge.clone() })?;
        Ok(edge)
    }

    fn write_edge(&self, tx: &mut Transaction, edge: &Edge) -> Result<()> {
        let bytes = encode_edge(edge);
        tx.set(&adjacency_key(Direction::Out, edge.out_vertex, edge.id), &bytes)?;
        tx.set(&adjacency_key(Direction::In, edge.in_vertex, edge.id), &bytes)?;
        Ok(())
    }

    fn remove_edge(&self, tx: &mut Transaction, edge: &Edge) -> Result<()> {
        tx.delete(&adjacency_key(Direction::Out, edge.out_vertex, edge.id))?;
        tx.delete(&adjacency_key(Direction::In, edge.in_vertex, edge.id))?;
        Ok(())
    }

    fn find_edge(&self, tx: &mut Transaction, id: EdgeId, hint: VertexId) -> Result<Edge> {
        for e in self.incident_edges(tx, hint, Direction::Both, None)? {
            if e.id == id {
                return Ok(e);
            }
        }
        Err(Error::NotFound(format!("edge {}", id.0)))
    }

    pub fn delete_edge(&self, tx: &mut Transaction, id: EdgeId, endpoint: VertexId) -> Result<()> {
        let edge = self.find_edge(tx, id, endpoint)?;
        self.remove_edge(tx, &edge)?;
        self.emit(tx, &GraphChange::DeleteEdge { edge })?;
        Ok(())
    }

    /// Sets, updates, or (with `new_value` = None) deletes a vertex property.
    /// Deleting an absent property is a no-op emitting no change.
    pub fn set_vertex_property(
        &self,
        tx: &mut Transaction,
        id: VertexId,
        name: &str,
        new_value: Option<Scalar>,
    ) -> Result<()> {
        let old_vertex = self.require_vertex(tx, id)?;
        let old_value = old_vertex.properties.get(name).cloned();
        if old_value.is_none() && new_value.is_none() {
            return Ok(());
        }
        if old_value == new_value {
            return Ok(());
        }
        let mut new_vertex = old_vertex.clone();
        match &new_value {
            Some(v) => {
                new_vertex.properties.insert(to_owned(name), v.clone());
            }
            None => {
                new_vertex.properties.remove(name);
            }
        }
        tx.set(&vertex_key(id), &encode_vertex(&new_vertex))?;
        self.emit(
            tx,
            &GraphChange::VertexPropChange {
                old_vertex,
                new_vertex,
                prop: to_owned(name),
                old_value,
                new_value,
            },
        )?;
        Ok(())
    }

    pub fn set_edge_property(
        &self,
        tx: &mut Transaction,
        id: EdgeId,
        endpoint: VertexId,
        name: &str,
        new_value: Option<Scalar>,
    ) -> Result<()> {
        let old_edge = self.find_edge(tx, id, endpoint)?;
        let old_value = old_edge.properties.get(name).cloned();
        if old_value.is_none() && new_value.is_none() {
            return Ok(());
        }
        if old_value == new_value {
            return Ok(());
        }
        let mut new_edge = old_edge.clone();
        match &new_value {
            Some(v) => {
                new_edge.properties.insert(to_owned(name), v.clone());
            }
            None => {
                new_edge.properties.remove(name);
            }
        }
        self.write_edge(tx, &new_edge)?;
        self.emit(
            tx,
            &GraphChange::EdgePropChange {
                old_edge,
                new_edge,
                prop: to_owned(name),
                old_value,
                new_value,
            },
        )?;
        Ok(())
    }

    /// Leaf ids of edges passing `edge_pred` whose far vertex passes
    /// `leaf_pred`, in deterministic ascending-id order. `Both` unions the two
    /// directional scans.
    pub fn neighbors(
        &self,
        tx: &mut Transaction,
        root: VertexId,
        dir: Direction,
        edge_label: Option<&str>,
        edge_pred: &dyn Fn(&Edge) -> bool,
        leaf_pred: &dyn Fn(&Vertex) -> bool,
    ) -> Result<Vec<VertexId>> {
        self.require_vertex(tx, root)?;
        let mut out = Vec::new();
        for edge in self.incident_edges(tx, root, dir, edge_label)? {
            if !edge_pred(&edge) {
                continue;
            }
            let far = if edge.out_vertex == root { edge.in_vertex } else { edge.out_vertex };
            self.counters.leaf_vertex_reads.fetch_add(1, Ordering::Relaxed);
            if let Some(v) = self.vertex(tx, far)? {
                if leaf_pred(&v) {
                    out.push(far);
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Deletes a supernode by removing its edges in batches, each its own
    /// transaction, then the vertex itself in a final transaction. Retries a
    /// conflicted batch from scratch.
    pub fn delete_vertex_batched(&self, id: VertexId, batch_size: usize) -> Result<()> {
        assert!(batch_size > 0);
        loop {
            let mut tx = self.begin(Mode::ReadWrite);
            let edges = self.incident_edges(&mut tx, id, Direction::Both, None)?;
            if edges.is_empty() {
                self.delete_vertex(&mut tx, id)?;
                match tx.commit() {
                    Ok(_) => return Ok(()),
                    Err(Error::Conflict) => continue,
                    Err(e) => return Err(e),
                }
            }
            for edge in edges.iter().take(batch_size) {
                self.remove_edge(&mut tx, edge)?;
                self.emit(&mut tx, &GraphChange::DeleteEdge { edge: edge.clone() })?;
            }
            match tx.commit() {
                Ok(_) | Err(Error::Conflict) => {}
                Err(e) => return Err(e),
            }
        }
    }
}

fn to_owned(s: &str) -> String {
    s.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Recorder {
        events: Mutex<Vec<String>>,
    }

    impl ChangeListener for Recorder {
        fn on_change(&self, _: &Graph, _: &mut Transaction, change: &GraphChange) -> Result<()> {
            let tag = match change {
                GraphChange::AddVertex { .. } => "add-vertex",
                GraphChange::DeleteVertex { .. } => "delete-vertex",
                GraphChange::AddEdge { .. } => "add-edge",
                GraphChange::DeleteEdge { .. } => "delete-edge",
                GraphChange::VertexPropChange { .. } => "vertex-prop",
                GraphChange::EdgePropChange { .. } => "edge-prop",
            };
            self.events.lock().unwrap().push(tag.to_string());
            Ok(())
        }
    }

    fn graph() -> Arc<Graph> {
        Graph::new(Store::open())
    }

    fn props(pairs: &[(&str, Scalar)]) -> Properties {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn add_vertex_assigns_fresh_ids() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let a = g.add_vertex(&mut tx, "watch-list", props(&[("name", "BF To-Buys".into())])).unwrap();
        let b = g.add_vertex(&mut tx, "watch-list", Properties::new()).unwrap();
        assert_ne!(a, b);
        tx.commit().unwrap();
        let mut tx = g.begin(Mode::ReadOnly);
        let v = g.vertex(&mut tx, a).unwrap().unwrap();
        assert_eq!(v.label, "watch-list");
        assert_eq!(v.properties.get("name"), Some(&Scalar::Str("BF To-Buys".into())));
    }

    #[test]
    fn aborted_add_leaves_no_vertex() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let id = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        drop(tx);
        let mut tx = g.begin(Mode::ReadOnly);
        assert!(g.vertex(&mut tx, id).unwrap().is_none());
    }

    #[test]
    fn delete_vertex_cascades_and_counts_events() {
        let g = graph();
        let rec = Arc::new(Recorder { events: Mutex::new(Vec::new()) });
        let mut tx = g.begin(Mode::ReadWrite);
        let root = g.add_vertex(&mut tx, "watch-list", Properties::new()).unwrap();
        let mut leaves = Vec::new();
        for _ in 0..50 {
            let l = g.add_vertex(&mut tx, "listing", Properties::new()).unwrap();
            g.add_edge(&mut tx, root, l, "includes", Properties::new()).unwrap();
            leaves.push(l);
        }
        tx.commit().unwrap();

        g.subscribe(rec.clone());
        let mut tx = g.begin(Mode::ReadWrite);
        g.delete_vertex(&mut tx, root).unwrap();
        tx.commit().unwrap();
        let events = rec.events.lock().unwrap();
        assert_eq!(events.len(), 51);
        assert_eq!(events.iter().filter(|e| *e == "delete-edge").count(), 50);
        assert_eq!(events.last().unwrap(), "delete-vertex");

        let mut tx = g.begin(Mode::ReadOnly);
        assert!(g.vertex(&mut tx, root).unwrap().is_none());
        for l in leaves {
            assert!(g.incident_edges(&mut tx, l, Direction::Both, None).unwrap().is_empty());
        }
    }

    #[test]
    fn delete_isolated_vertex_emits_one_event() {
        let g = graph();
        let rec = Arc::new(Recorder { events: Mutex::new(Vec::new()) });
        let mut tx = g.begin(Mode::ReadWrite);
        let v = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        tx.commit().unwrap();
        g.subscribe(rec.clone());
        let mut tx = g.begin(Mode::ReadWrite);
        g.delete_vertex(&mut tx, v).unwrap();
        tx.commit().unwrap();
        assert_eq!(rec.events.lock().unwrap().as_slice(), &["delete-vertex".to_string()]);
    }

    #[test]
    fn delete_absent_vertex_errors() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        assert!(matches!(g.delete_vertex(&mut tx, VertexId(999)), Err(Error::NotFound(_))));
    }

    #[test]
    fn add_edge_to_deleted_vertex_errors() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let a = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        let b = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        g.delete_vertex(&mut tx, b).unwrap();
        assert!(matches!(
            g.add_edge(&mut tx, a, b, "e", Properties::new()),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn self_loop_permitted_once() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let v = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        g.add_edge(&mut tx, v, v, "loop", Properties::new()).unwrap();
        let edges = g.incident_edges(&mut tx, v, Direction::Both, None).unwrap();
        assert_eq!(edges.len(), 1);
        let ids = g.neighbors(&mut tx, v, Direction::Both, None, &|_| true, &|_| true).unwrap();
        assert_eq!(ids, vec![v]);
    }

    #[test]
    fn property_change_carries_old_and_new() {
        let g = graph();
        let changes: Arc<Mutex<Vec<(Option<Scalar>, Option<Scalar>)>>> =
            Arc::new(Mutex::new(Vec::new()));
        struct Cap(Arc<Mutex<Vec<(Option<Scalar>, Option<Scalar>)>>>);
        impl ChangeListener for Cap {
            fn on_change(&self, _: &Graph, _: &mut Transaction, c: &GraphChange) -> Result<()> {
                if let GraphChange::VertexPropChange { old_value, new_value, .. } = c {
                    self.0.lock().unwrap().push((old_value.clone(), new_value.clone()));
                }
                Ok(())
            }
        }
        let mut tx = g.begin(Mode::ReadWrite);
        let v = g.add_vertex(&mut tx, "listing", props(&[("Status", 0.into())])).unwrap();
        tx.commit().unwrap();
        g.subscribe(Arc::new(Cap(changes.clone())));
        let mut tx = g.begin(Mode::ReadWrite);
        g.set_vertex_property(&mut tx, v, "Status", Some(1.into())).unwrap();
        // deleting an absent property emits nothing
        g.set_vertex_property(&mut tx, v, "nope", None).unwrap();
        tx.commit().unwrap();
        let got = changes.lock().unwrap();
        assert_eq!(got.as_slice(), &[(Some(Scalar::Int(0)), Some(Scalar::Int(1)))]);
    }

    #[test]
    fn edge_property_change_old_new() {
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let a = g.add_vertex(&mut tx, "watch-list", Properties::new()).unwrap();
        let b = g.add_vertex(&mut tx, "listing", Properties::new()).unwrap();
        let e = g.add_edge(&mut tx, a, b, "includes", props(&[("IsActive", true.into())])).unwrap();
        tx.commit().unwrap();
        let mut tx = g.begin(Mode::ReadWrite);
        g.set_edge_property(&mut tx, e.id, a, "IsActive", Some(false.into())).unwrap();
        tx.commit().unwrap();
        let mut tx = g.begin(Mode::ReadOnly);
        let edges = g.incident_edges(&mut tx, a, Direction::Out, None).unwrap();
        assert_eq!(edges[0].properties.get("IsActive"), Some(&Scalar::Bool(false)));
    }

    #[test]
    fn neighbors_matches_brute_force() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(7);
        let g = graph();
        let mut tx = g.begin(Mode::ReadWrite);
        let mut vids = Vec::new();
        for _ in 0..30 {
            let status: i64 = rng.gen_range(0..2);
            vids.push(
                g.add_vertex(&mut tx, "listing", props(&[("Status", status.into())])).unwrap(),
            );
        }
        let mut all_edges = Vec::new();
        for _ in 0..200 {
            let a = vids[rng.gen_range(0..vids.len())];
            let b = vids[rng.gen_range(0..vids.len())];
            let active: bool = rng.gen();
            let e = g
                .add_edge(&mut tx, a, b, "includes", props(&[("IsActive", active.into())]))
                .unwrap();
            all_edges.push(e);
        }
        tx.commit().unwrap();

        let edge_pred =
            |e: &Edge| e.properties.get("IsActive") == Some(&Scalar::Bool(true));
        let leaf_pred = |v: &Vertex| v.properties.get("Status") == Some(&Scalar::Int(0));
        let mut tx = g.begin(Mode::ReadOnly);
        for &root in &vids {
            let got = g
                .neighbors(&mut tx, root, Direction::Out, Some("includes"), &edge_pred, &leaf_pred)
                .unwrap();
            let mut want: Vec<VertexId> = all_edges
                .iter()
                .filter(|e| e.out_vertex == root && edge_pred(e))
                .map(|e| e.in_vertex)
                .filter(|id| {
                    let v = g.vertex(&mut tx, *id).unwrap().unwrap();
                    leaf_pred(&v)
                })
                .collect();
            want.sort();
            want.dedup();
            assert_eq!(got, want);
        }
    }

    /// Replaying the emitted change stream against a copy of the pre-state
    /// reproduces the post-state.
    #[test]
    fn change_stream_replay_reproduces_post_state() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};

        struct Tape(Mutex<Vec<GraphChange>>);
        impl ChangeListener for Tape {
            fn on_change(&self, _: &Graph, _: &mut Transaction, c: &GraphChange) -> Result<()> {
                self.0.lock().unwrap().push(c.clone());
                Ok(())
            }
        }

        for seed in 0..5u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let g = graph();
            // pre-state
            let mut tx = g.begin(Mode::ReadWrite);
            let mut vids = Vec::new();
            for _ in 0..10 {
                vids.push(g.add_vertex(&mut tx, "v", Properties::new()).unwrap());
            }
            let mut eids = Vec::new();
            for _ in 0..20 {
                let a = vids[rng.gen_range(0..vids.len())];
                let b = vids[rng.gen_range(0..vids.len())];
                let e = g.add_edge(&mut tx, a, b, "e", Properties::new()).unwrap();
                eids.push((e.id, a));
            }
            tx.commit().unwrap();
            let pre = snapshot_state(&g);

            let tape = Arc::new(Tape(Mutex::new(Vec::new())));
            g.subscribe(tape.clone());
            let mut tx = g.begin(Mode::ReadWrite);
            for _ in 0..30 {
                match rng.gen_range(0..5) {
                    0 => {
                        vids.push(g.add_vertex(&mut tx, "v", Properties::new()).unwrap());
                    }
                    1 if !vids.is_empty() => {
                        let i = rng.gen_range(0..vids.len());
                        let v = vids.swap_remove(i);
                        let _ = g.delete_vertex(&mut tx, v);
                        eids.retain(|(_, hint)| *hint != v);
                    }
                    2 if vids.len() >= 2 => {
                        let a = vids[rng.gen_range(0..vids.len())];
                        let b = vids[rng.gen_range(0..vids.len())];
                        if let Ok(e) = g.add_edge(&mut tx, a, b, "e", Properties::new()) {
                            eids.push((e.id, a));
                        }
                    }
                    3 if !vids.is_empty() => {
                        let v = vids[rng.gen_range(0..vids.len())];
                        let val: i64 = rng.gen_range(0..3);
                        let _ = g.set_vertex_property(&mut tx, v, "p", Some(val.into()));
                    }
                    _ if !eids.is_empty() => {
                        let (e, hint) = eids[rng.gen_range(0..eids.len())];
                        let val: i64 = rng.gen_range(0..3);
                        let _ = g.set_edge_property(&mut tx, e, hint, "q", Some(val.into()));
                    }
                    _ => {}
                }
            }
            tx.commit().unwrap();
            let post = snapshot_state(&g);

            // replay the tape on the pre-state
            let mut replay = pre;
            for change in tape.0.lock().unwrap().iter() {
                apply_change(&mut replay, change);
            }
            assert_eq!(replay, post, "seed {seed}");
        }
    }

    type State = (BTreeMap<u64, Vertex>, BTreeMap<u64, Edge>);

    fn snapshot_state(g: &Graph) -> State {
        let mut tx = g.begin(Mode::ReadOnly);
        let mut vertices = BTreeMap::new();
        let mut edges = BTreeMap::new();
        for id in g.vertex_ids(&mut tx).unwrap() {
            vertices.insert(id.0, g.vertex(&mut tx, id).unwrap().unwrap());
            for e in g.incident_edges(&mut tx, id, Direction::Both, None).unwrap() {
                edges.insert(e.id.0, e);
            }
        }
        (vertices, edges)
    }

    fn apply_change(state: &mut State, change: &GraphChange) {
        match change {
            GraphChange::AddVertex { vertex } => {
                state.0.insert(vertex.id.0, vertex.clone());
            }
            GraphChange::DeleteVertex { vertex } => {
                state.0.remove(&vertex.id.0);
            }
            GraphChange::AddEdge { edge } => {
                state.1.insert(edge.id.0, edge.clone());
            }
            GraphChange::DeleteEdge { edge } => {
                state.1.remove(&edge.id.0);
            }
            GraphChange::VertexPropChange { new_vertex, .. } => {
                state.0.insert(new_vertex.id.0, new_vertex.clone());
            }
            GraphChange::EdgePropChange { new_edge, .. } => {
                state.1.insert(new_edge.id.0, new_edge.clone());
            }
        }
    }

    #[test]
    fn listener_writes_commit_atomically() {
        struct SideWrite;
        impl ChangeListener for SideWrite {
            fn on_change(&self, _: &Graph, tx: &mut Transaction, c: &GraphChange) -> Result<()> {
                if let GraphChange::AddVertex { vertex } = c {
                    tx.set(format!("C/marker/{}", vertex.id).as_bytes(), b"1")?;
                }
                Ok(())
            }
        }
        let g = graph();
        g.subscribe(Arc::new(SideWrite));
        let mut tx = g.begin(Mode::ReadWrite);
        let v = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        tx.commit().unwrap();
        let mut tx = g.begin(Mode::ReadOnly);
        assert!(tx.get(format!("C/marker/{v}").as_bytes()).unwrap().is_some());

        // aborted transaction leaves neither graph nor marker
        let mut tx = g.begin(Mode::ReadWrite);
        let w = g.add_vertex(&mut tx, "v", Properties::new()).unwrap();
        drop(tx);
        let mut tx = g.begin(Mode::ReadOnly);
        assert!(g.vertex(&mut tx, w).unwrap().is_none());
        assert!(tx.get(format!("C/marker/{w}").as_bytes()).unwrap().is_none());
    }
}
