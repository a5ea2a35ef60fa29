//! Ordered, transactional key-value substrate.
//!
//! Single-process in-memory ordered map with multi-version values keyed by
//! commit version. Transactions take a snapshot at begin, buffer their writes
//! at the client, and validate at commit with optimistic concurrency control:
//! a transaction aborts if any key or prefix it read was written by a
//! transaction that committed after its snapshot. Read-only transactions
//! bypass conflict bookkeeping entirely and never abort.
//!
//! Conflict granularity is exact keys plus scanned prefixes: a scanned prefix
//! conflicts with any committed write under it, and a committed clear-range
//! conflicts with any read that intersects it. This is coarser than byte-range
//! conflicts but never admits a non-serializable schedule.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};

/// Hard limit on the size of a single value, in bytes.
pub const DEFAULT_MAX_VALUE_SIZE: usize = 100_000;

pub type KvKey = Vec<u8>;
pub type KvValue = Vec<u8>;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub max_value_size: usize,
    /// Injected per-operation delay standing in for a network round-trip.
    /// Applied to snapshot reads, range scans, and commits.
    pub op_delay: Option<Duration>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { max_value_size: DEFAULT_MAX_VALUE_SIZE, op_delay: None }
    }
}

/// A committed write set, retained for conflict detection.
struct CommitRecord {
    version: u64,
    keys: Vec<KvKey>,
    ranges: Vec<KvKey>,
}

struct Inner {
    /// Per-key version chains, ascending by commit version. `None` is a tombstone.
    versions: BTreeMap<KvKey, Vec<(u64, Option<KvValue>)>>,
    commits: Vec<CommitRecord>,
    version: u64,
}

/// The shared store. Commit is the only globally serializing point.
pub struct Store {
    inner: Mutex<Inner>,
    config: StoreConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone)]
enum LogOp {
    Set(KvKey, KvValue),
    Delete(KvKey),
    ClearRange(KvKey),
}

/// A transaction over the store: snapshot reads plus a client-side write buffer.
pub struct Transaction {
    store: Arc<Store>,
    mode: Mode,
    read_version: u64,
    log: Vec<LogOp>,
    read_keys: HashSet<KvKey>,
    read_prefixes: Vec<KvKey>,
}

impl Store {
    pub fn new(config: StoreConfig) -> Arc<Self> {
        Arc::new(Store {
            inner: Mutex::new(Inner { versions: BTreeMap::new(), commits: Vec::new(), version: 0 }),
            config,
        })
    }

    pub fn open() -> Arc<Self> {
        Self::new(StoreConfig::default())
    }

    pub fn max_value_size(&self) -> usize {
        self.config.max_value_size
    }

    /// Current committed version.
    pub fn version(&self) -> u64 {
        self.inner.lock().unwrap().version
    }

    pub fn begin(self: &Arc<Self>, mode: Mode) -> Transaction {
        let read_version = self.inner.lock().unwrap().version;
        Transaction {
            store: self.clone(),
            mode,
            read_version,
            log: Vec::new(),
            read_keys: HashSet::new(),
            read_prefixes: Vec::new(),
        }
    }

    fn delay(&self) {
        if let Some(d) = self.config.op_delay {
            std::thread::sleep(d);
        }
    }
}

/// Value of `key` visible at `version`, ignoring any write buffer.
fn snapshot_get(inner: &Inner, key: &[u8], version: u64) -> Option<KvValue> {
    let chain = inner.versions.get(key)?;
    chain.iter().rev().find(|(v, _)| *v <= version).and_then(|(_, val)| val.clone())
}

impl Transaction {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn read_version(&self) -> u64 {
        self.read_version
    }

    /// Buffered write if present, else the snapshot value.
    pub fn get(&mut self, key: &[u8]) -> Result<Option<KvValue>> {
        self.store.delay();
        if self.mode == Mode::ReadWrite {
            self.read_keys.insert(key.to_vec());
        }
        for op in self.log.iter().rev() {
            match op {
                LogOp::Set(k, v) if k.as_slice() == key => return Ok(Some(v.clone())),
                LogOp::Delete(k) if k.as_slice() == key => return Ok(None),
                LogOp::ClearRange(p) if key.starts_with(p) => return Ok(None),
                _ => {}
            }
        }
        let inner = self.store.inner.lock().unwrap();
        Ok(snapshot_get(&inner, key, self.read_version))
    }

    /// All live pairs whose key starts with `prefix`, in ascending key order,
    /// merged with this transaction's own buffered writes.
    pub fn range_scan(&mut self, prefix: &[u8]) -> Result<Vec<(KvKey, KvValue)>> {
        self.store.delay();
        if self.mode == Mode::ReadWrite {
            self.read_prefixes.push(prefix.to_vec());
        }
        let mut candidates: std::collections::BTreeSet<KvKey> = std::collections::BTreeSet::new();
        {
            let inner = self.store.inner.lock().unwrap();
            for (k, _) in inner.versions.range(prefix.to_vec()..) {
                if !k.starts_with(prefix) {
                    break;
                }
                candidates.insert(k.clone());
            }
        }
        for op in &self.log {
            if let LogOp::Set(k, _) = op {
                if k.starts_with(prefix) {
                    candidates.insert(k.clone());
                }
            }
        }
        let mut out = Vec::new();
        for key in candidates {
            if let Some(v) = self.effective(&key)? {
                out.push((key, v));
            }
        }
        Ok(out)
    }

    fn effective(&self, key: &[u8]) -> Result<Option<KvValue>> {
        for op in self.log.iter().rev() {
            match op {
                LogOp::Set(k, v) if k.as_slice() == key => return Ok(Some(v.clone())),
                LogOp::Delete(k) if k.as_slice() == key => return Ok(None),
                LogOp::ClearRange(p) if key.starts_with(p) => return Ok(None),
                _ => {}
            }
        }
        let inner = self.store.inner.lock().unwrap();
        Ok(snapshot_get(&inner, key, self.read_version))
    }

    fn assert_writable(&self) -> Result<()> {
        if self.mode != Mode::ReadWrite {
            return Err(Error::ReadOnlyTransaction);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        self.assert_writable()?;
        if value.len() > self.store.config.max_value_size {
            return Err(Error::ValueTooLarge(value.len(), self.store.config.max_value_size));
        }
        self.log.push(LogOp::Set(key.to_vec(), value.to_vec()));
        Ok(())
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        self.assert_writable()?;
        self.log.push(LogOp::Delete(key.to_vec()));
        Ok(())
    }

    pub fn clear_range(&mut self, prefix: &[u8]) -> Result<()> {
        self.assert_writable()?;
        self.log.push(LogOp::ClearRange(prefix.to_vec()));
        Ok(())
    }

    pub fn has_writes(&self) -> bool {
        !self.log.is_empty()
    }

    /// Atomically applies the write buffer if no key or range in the read set
    /// was written by a transaction committed after this snapshot. Returns the
    /// store version. A transaction with an empty buffer commits without
    /// advancing the version.
    pub fn commit(self) -> Result<u64> {
        self.store.delay();
        let mut inner = self.store.inner.lock().unwrap();
        if self.log.is_empty() {
            return Ok(inner.version);
        }
        // Conflict check against everything committed after our snapshot.
        for rec in inner.commits.iter().rev() {
            if rec.version <= self.read_version {
                break;
            }
            for wk in &rec.keys {
                if self.read_keys.contains(wk)
                    || self.read_prefixes.iter().any(|p| wk.starts_with(p.as_slice()))
                {
                    return Err(Error::Conflict);
                }
            }
            for r in &rec.ranges {
                if self.read_keys.iter().any(|k| k.starts_with(r.as_slice()))
                    || self
                        .read_prefixes
                        .iter()
                        .any(|p| p.starts_with(r.as_slice()) || r.starts_with(p.as_slice()))
                {
                    return Err(Error::Conflict);
                }
            }
        }
        let new_version = inner.version + 1;
        let mut pending: BTreeMap<KvKey, Option<KvValue>> = BTreeMap::new();
        let mut ranges = Vec::new();
        for op in &self.log {
            match op {
                LogOp::Set(k, v) => {
                    pending.insert(k.clone(), Some(v.clone()));
                }
                LogOp::Delete(k) => {
                    pending.insert(k.clone(), None);
                }
                LogOp::ClearRange(p) => {
                    // A clear-range applies at commit time: it tombstones keys
                    // live at the latest committed state, not just our snapshot.
                    let live: Vec<KvKey> = inner
                        .versions
                        .range(p.clone()..)
                        .take_while(|(k, _)| k.starts_with(p.as_slice()))
                        .filter(|(k, chain)| {
                            chain.last().map(|(_, v)| v.is_some()).unwrap_or(false)
                                && !matches!(pending.get(*k), Some(None))
                        })
                        .map(|(k, _)| k.clone())
                        .collect();
                    for k in live {
                        pending.insert(k, None);
                    }
                    // Clear any earlier buffered sets under the prefix.
                    let buffered: Vec<KvKey> = pending
                        .range(p.clone()..)
                        .take_while(|(k, _)| k.starts_with(p.as_slice()))
                        .map(|(k, _)| k.clone())
                        .collect();
                    for k in buffered {
                        pending.insert(k, None);
                    }
                    ranges.push(p.clone());
                }
            }
        }
        let keys: Vec<KvKey> = pending.keys().cloned().collect();
        for (k, v) in pending {
            inner.versions.entry(k).or_default().push((new_version, v));
        }
        inner.commits.push(CommitRecord { version: new_version, keys, ranges });
        inner.version = new_version;
        Ok(new_version)
    }
}
