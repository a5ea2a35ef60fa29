//! The cache subspace: value serialization with compression, chunking over
//! the value-size limit, transactional entry operations, and the asynchronous
//! Cache Populate (CP) queue.
//!
//! An entry's value is a count-prefixed list of fixed-width big-endian 64-bit
//! leaf ids, compressed, then split into chunks of at most the store's value
//! size limit. Chunk `i` of key `k` lives at `C/<k>/<i:06>`, so a range scan
//! on `C/<k>/` retrieves the chunks in order and a clear-range on the same
//! prefix deletes the entry.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphstore::{Graph, VertexId};
use crate::kvstore::{Mode, Transaction};
use crate::templates::{build_key, execute_instance, SubQueryTemplate, WildcardBinding};

/// Prefix of the cache subspace, keeping it apart from the graph subspace.
pub const CACHE_SUBSPACE: &[u8] = b"C/";

pub trait Codec: Send + Sync {
    fn name(&self) -> &'static str;
    fn compress(&self, data: &[u8]) -> Vec<u8>;
    fn decompress(&self, data: &[u8]) -> Result<Vec<u8>>;
}

pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> &'static str {
        "none"
    }
    fn compress(&self, data: &[u8]) -> Vec<u8> {
        data.to_vec()
    }
    fn decompress(&self, data: &[u8]) -> Result<Vec<u8>> {
        Ok(data.to_vec())
    }
}

pub struct ZstdCodec;

impl Codec for ZstdCodec {
    fn name(&self) -> &'static str {
        "zstd"
    }
    fn compress(&self, data: &[u8]) -> Vec<u8> {
        zstd::encode_all(data, 0).expect("zstd compression of in-memory buffer")
    }
    fn decompress(&self, data: &[u8]) -> Result<Vec<u8>> {
        zstd::decode_all(data).map_err(|e| Error::MalformedValue(format!("zstd: {e}")))
    }
}

pub fn codec_by_name(name: &str) -> Result<Box<dyn Codec>> {
    match name {
        "none" => Ok(Box::new(IdentityCodec)),
        "zstd" => Ok(Box::new(ZstdCodec)),
        other => Err(Error::InvalidSpec(format!("unknown codec {other:?}"))),
    }
}

/// Splits a payload into `max(1, ceil(len/limit))` chunks; an empty payload
/// still yields one (empty) chunk so present-and-empty is distinguishable
/// from absent.
pub fn chunk_split(bytes: &[u8], limit: usize) -> Vec<&[u8]> {
    if bytes.is_empty() {
        return vec![&[]];
    }
    bytes.chunks(limit).collect()
}

pub struct Cache {
    codec: Box<dyn Codec>,
    chunk_limit: usize,
    /// Number of cache-subspace entry lookups, for hit accounting.
    pub entry_reads: AtomicU64,
}

fn chunk_prefix(rendered: &str) -> Vec<u8> {
    let mut k = CACHE_SUBSPACE.to_vec();
    k.extend_from_slice(rendered.as_bytes());
    k.push(b'/');
    k
}

fn chunk_key(rendered: &str, index: usize) -> Vec<u8> {
    let mut k = chunk_prefix(rendered);
    k.extend_from_slice(format!("{index:06}").as_bytes());
    k
}

/// Prefix of every chunk of every entry of one template, used when a removed
/// template's entries are reclaimed.
pub fn template_prefix(template_name: &str) -> Vec<u8> {
    let mut k = CACHE_SUBSPACE.to_vec();
    k.extend_from_slice(template_name.as_bytes());
    k.push(b':');
    k
}

impl Cache {
    pub fn new(codec: Box<dyn Codec>, chunk_limit: usize) -> Arc<Self> {
        Arc::new(Cache { codec, chunk_limit, entry_reads: AtomicU64::new(0) })
    }

    pub fn codec_name(&self) -> &'static str {
        self.codec.name()
    }

    /// Serializes and compresses a sorted, duplicate-free id list.
    pub fn encode(&self, leaf_ids: &[VertexId]) -> Vec<u8> {
        let mut raw = Vec::with_capacity(8 + leaf_ids.len() * 8);
        raw.extend_from_slice(&(leaf_ids.len() as u64).to_be_bytes());
        for id in leaf_ids {
            raw.extend_from_slice(&id.0.to_be_bytes());
        }
        self.codec.compress(&raw)
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Vec<VertexId>> {
        let raw = self.codec.decompress(bytes)?;
        if raw.len() < 8 {
            return Err(Error::MalformedValue("missing count header".into()));
        }
        let count = u64::from_be_bytes(raw[..8].try_into().unwrap()) as usize;
        if raw.len() != 8 + count * 8 {
            return Err(Error::MalformedValue(format!(
                "count {count} does not match payload of {} bytes",
                raw.len()
            )));
        }
        let ids: Vec<VertexId> = raw[8..]
            .chunks_exact(8)
            .map(|c| VertexId(u64::from_be_bytes(c.try_into().unwrap())))
            .collect();
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MalformedValue("ids not sorted and unique".into()));
        }
        Ok(ids)
    }

    /// Replaces whatever chunks exist under `rendered` with the given payload.
    pub fn write_chunks(&self, tx: &mut Transaction, rendered: &str, bytes: &[u8]) -> Result<()> {
        tx.clear_range(&chunk_prefix(rendered))?;
        for (i, chunk) in chunk_split(bytes, self.chunk_limit).iter().enumerate() {
            tx.set(&chunk_key(rendered, i), chunk)?;
        }
        Ok(())
    }

    /// Reassembles an entry's chunks; `None` when no chunk exists.
    pub fn read_chunks(&self, tx: &mut Transaction, rendered: &str) -> Result<Option<Vec<u8>>> {
        let chunks = tx.range_scan(&chunk_prefix(rendered))?;
        if chunks.is_empty() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        for (_, v) in chunks {
            bytes.extend_from_slice(&v);
        }
        Ok(Some(bytes))
    }

    pub fn put_entry(
        &self,
        tx: &mut Transaction,
        rendered: &str,
        leaf_ids: &[VertexId],
    ) -> Result<()> {
        let bytes = self.encode(leaf_ids);
        self.write_chunks(tx, rendered, &bytes)
    }

    /// `None` is a miss. A present entry holding the empty list is a hit.
    pub fn get_entry(&self, tx: &mut Transaction, rendered: &str) -> Result<Option<Vec<VertexId>>> {
        self.entry_reads.fetch_add(1, Ordering::Relaxed);
        match self.read_chunks(tx, rendered)? {
            Some(bytes) => Ok(Some(self.decode(&bytes)?)),
            None => Ok(None),
        }
    }

    pub fn delete_entry(&self, tx: &mut Transaction, rendered: &str) -> Result<()> {
        tx.clear_range(&chunk_prefix(rendered))
    }
}

/// A queued request to recompute and insert one missed instance.
pub struct PopulateRequest {
    pub template: Arc<SubQueryTemplate>,
    pub root: VertexId,
    pub edge_values: WildcardBinding,
    pub leaf_values: WildcardBinding,
}

/// Bounded FIFO between the read path and the CP workers. Enqueue never
/// blocks the reader; a full queue drops the request, which only costs a
/// future miss.
pub struct PopulateQueue {
    queue: Mutex<VecDeque<PopulateRequest>>,
    capacity: usize,
    pub dropped_full: AtomicU64,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct CpStats {
    pub populated: u64,
    pub discarded_after_retries: u64,
}

impl PopulateQueue {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(PopulateQueue {
            queue: Mutex::new(VecDeque::new()),
            capacity,
            dropped_full: AtomicU64::new(0),
        })
    }

    pub fn enqueue(&self, req: PopulateRequest) {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.capacity {
            self.dropped_full.fetch_add(1, Ordering::Relaxed);
            return;
        }
        q.push_back(req);
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pop(&self) -> Option<PopulateRequest> {
        self.queue.lock().unwrap().pop_front()
    }
}

/// Drains the queue, executing each request as its own read-write
/// transaction: run the instance at the transaction's snapshot, then insert
/// the entry. A conflicting commit is retried up to `retry_budget` times and
/// then discarded; the entry is simply absent and a later miss re-enqueues it.
pub fn cp_drain(
    graph: &Graph,
    cache: &Cache,
    queue: &PopulateQueue,
    retry_budget: u32,
) -> Result<CpStats> {
    let mut stats = CpStats::default();
    while let Some(req) = queue.pop() {
        let mut attempts = retry_budget.max(1);
        loop {
            let mut tx = graph.begin(Mode::ReadWrite);
            let ids = execute_instance(
                graph,
                &mut tx,
                &req.template,
                req.root,
                &req.edge_values,
                &req.leaf_values,
            )?;
            let key = build_key(
                &req.template,
                req.root,
                req.edge_values.clone(),
                req.leaf_values.clone(),
            )?;
            cache.put_entry(&mut tx, &key.rendered, &ids)?;
            match tx.commit() {
                Ok(_) => {
                    stats.populated += 1;
                    break;
                }
                Err(Error::Conflict) => {
                    attempts -= 1;
                    if attempts == 0 {
                        stats.discarded_after_retries += 1;
                        break;
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(stats)
}
