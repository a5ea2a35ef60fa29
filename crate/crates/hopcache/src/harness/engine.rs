//! One query-processor instance wired together: store, graph, cache,
//! template registry, maintenance listener, and populate queue, plus the
//! cache/rewrite toggles the benchmark configurations flip.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use crate::cache::{codec_by_name, cp_drain, Cache, CpStats, PopulateQueue};
use crate::error::{Error, Result};
use crate::graphstore::{Graph, Properties, VertexId};
use crate::kvstore::{Mode, Store, StoreConfig, Transaction, DEFAULT_MAX_VALUE_SIZE};
use crate::maintenance::{ImpactReport, Maintainer, MaintenancePolicy};
use crate::queryengine::{
    decompose, execute_read, execute_rmw, parse, resolve_start, rewrite_id_filter, QueryResult,
    ReadContext, ReadStats, RmwOp, RmwOutcome, UniqueIndex,
};
use crate::templates::{parse_template, TemplateRegistry};

#[derive(Clone)]
pub struct EngineConfig {
    pub policy: MaintenancePolicy,
    pub use_cache: bool,
    pub use_rewrite: bool,
    pub codec: String,
    pub op_delay: Option<Duration>,
    pub queue_capacity: usize,
    pub cp_retry_budget: u32,
    /// Properties whose values are unique per vertex, feeding the id-filter
    /// rewrite.
    pub unique_props: Vec<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            policy: MaintenancePolicy::WriteAround,
            use_cache: true,
            use_rewrite: true,
            codec: "zstd".into(),
            op_delay: None,
            queue_capacity: 4096,
            cp_retry_budget: 5,
            unique_props: vec![],
        }
    }
}

pub struct Engine {
    pub store: Arc<Store>,
    pub graph: Arc<Graph>,
    pub cache: Arc<Cache>,
    pub registry: Arc<TemplateRegistry>,
    pub maintainer: Arc<Maintainer>,
    pub queue: Arc<PopulateQueue>,
    pub config: EngineConfig,
    /// External vertex aliases from the ingest file, keyed by the external
    /// id's decimal form.
    pub aliases: BTreeMap<String, VertexId>,
    unique_index: Option<UniqueIndex>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine> {
        let store = Store::new(StoreConfig {
            max_value_size: DEFAULT_MAX_VALUE_SIZE,
            op_delay: config.op_delay,
        });
        let graph = Graph::new(store.clone());
        let cache = Cache::new(codec_by_name(&config.codec)?, DEFAULT_MAX_VALUE_SIZE);
        let registry = TemplateRegistry::new();
        let maintainer = Maintainer::new(registry.clone(), cache.clone(), config.policy);
        graph.subscribe(maintainer.clone());
        let queue = PopulateQueue::new(config.queue_capacity);
        Ok(Engine {
            store,
            graph,
            cache,
            registry,
            maintainer,
            queue,
            config,
            aliases: BTreeMap::new(),
            unique_index: None,
        })
    }

    /// Ingests newline-delimited JSON vertex and edge records. Vertex
    /// records must precede the edges that reference them; file ids are
    /// external aliases.
    pub fn load_graph(&mut self, jsonl: &str) -> Result<(u64, u64)> {
        #[derive(serde::Deserialize)]
        struct Record {
            t: String,
            #[serde(default)]
            id: Option<u64>,
            #[serde(default)]
            out: Option<u64>,
            #[serde(default, rename = "in")]
            in_: Option<u64>,
            label: String,
            #[serde(default)]
            props: Properties,
        }
        let mut ext: BTreeMap<u64, VertexId> = BTreeMap::new();
        let (mut vertices, mut edges) = (0u64, 0u64);
        let mut tx = self.graph.begin(Mode::ReadWrite);
        for (lineno, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| {
                Error::InvalidSpec(format!("graph line {}: {e}", lineno + 1))
            })?;
            match rec.t.as_str() {
                "v" => {
                    let id = rec.id.ok_or_else(|| {
                        Error::InvalidSpec(format!("graph line {}: vertex without id", lineno + 1))
                    })?;
                    let v = self.graph.add_vertex(&mut tx, &rec.label, rec.props)?;
                    if ext.insert(id, v).is_some() {
                        return Err(Error::DuplicateName(format!("external vertex id {id}")));
                    }
                    vertices += 1;
                }
                "e" => {
                    let (out, in_) = match (rec.out, rec.in_) {
                        (Some(o), Some(i)) => (o, i),
                        _ => {
                            return Err(Error::InvalidSpec(format!(
                                "graph line {}: edge without endpoints",
                                lineno + 1
                            )))
                        }
                    };
                    let resolve = |x: u64| {
                        ext.get(&x).copied().ok_or_else(|| {
                            Error::NotFound(format!("external vertex id {x} (line {})", lineno + 1))
                        })
                    };
                    self.graph.add_edge(&mut tx, resolve(out)?, resolve(in_)?, &rec.label, rec.props)?;
                    edges += 1;
                }
                other => {
                    return Err(Error::InvalidSpec(format!(
                        "graph line {}: unknown record type {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        tx.commit()?;
        self.maintainer.drain_reports();
        for (e, v) in ext {
            self.aliases.insert(e.to_string(), v);
        }
        self.rebuild_unique_index()?;
        Ok((vertices, edges))
    }

    pub fn rebuild_unique_index(&mut self) -> Result<()> {
        if self.config.unique_props.is_empty() {
            self.unique_index = None;
            return Ok(());
        }
        let props: Vec<&str> = self.config.unique_props.iter().map(String::as_str).collect();
        let mut tx = self.graph.begin(Mode::ReadOnly);
        self.unique_index = Some(UniqueIndex::build(&self.graph, &mut tx, &props)?);
        Ok(())
    }

    /// Installs templates from JSON lines and activates both flags, as a
    /// single-node deployment whose enable protocol has trivially completed.
    pub fn register_and_enable_templates(&self, jsonl: &str) -> Result<u64> {
        let mut n = 0;
        for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
            let template = Arc::new(parse_template(line)?);
            let name = template.name.clone();
            if self.registry.contains(&name) {
                return Err(Error::DuplicateName(name));
            }
            self.registry.install(template);
            self.registry.set_invalidate_active(&name, true);
            self.registry.set_read_active(&name, true);
            n += 1;
        }
        Ok(n)
    }

    /// Parses, optionally rewrites, plans, and executes one read in its own
    /// read-only transaction.
    pub fn read(&self, text: &str) -> Result<(QueryResult, ReadStats)> {
        let mut traversal = parse(text)?;
        if self.config.use_rewrite {
            if let Some(index) = &self.unique_index {
                traversal = rewrite_id_filter(&traversal, index);
            }
        }
        let enabled = self.registry.snapshot_read_active();
        let plan = decompose(&traversal, &enabled)?;
        let mut tx = self.graph.begin(Mode::ReadOnly);
        let roots = resolve_start(&self.graph, &mut tx, &plan.start, &self.aliases)?;
        let ctx = ReadContext { graph: &self.graph, cache: &self.cache, queue: &self.queue };
        execute_read(&ctx, &mut tx, &plan, roots, self.config.use_cache)
    }

    /// Like `read`, but executes the plan twice at one snapshot — cached and
    /// uncached — and reports whether the results diverged.
    pub fn read_with_diff(&self, text: &str) -> Result<(QueryResult, ReadStats, bool)> {
        let mut traversal = parse(text)?;
        if self.config.use_rewrite {
            if let Some(index) = &self.unique_index {
                traversal = rewrite_id_filter(&traversal, index);
            }
        }
        let enabled = self.registry.snapshot_read_active();
        let plan = decompose(&traversal, &enabled)?;
        let mut tx = self.graph.begin(Mode::ReadOnly);
        let roots = resolve_start(&self.graph, &mut tx, &plan.start, &self.aliases)?;
        let ctx = ReadContext { graph: &self.graph, cache: &self.cache, queue: &self.queue };
        let (cached, stats) = execute_read(&ctx, &mut tx, &plan, roots.clone(), true)?;
        let (plain, _) = execute_read(&ctx, &mut tx, &plan, roots, false)?;
        let diverged = cached != plain;
        Ok((if self.config.use_cache { cached } else { plain }, stats, diverged))
    }

    /// Runs one RMW program with commit-conflict retries.
    pub fn rmw(&self, op: &RmwOp) -> Result<(RmwOutcome, Vec<ImpactReport>)> {
        loop {
            self.maintainer.drain_reports();
            let mut tx = self.graph.begin(Mode::ReadWrite);
            let outcome = execute_rmw(&self.graph, &mut tx, op)?;
            match tx.commit() {
                Ok(_) => return Ok((outcome, self.maintainer.drain_reports())),
                Err(Error::Conflict) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    /// Applies an arbitrary mutation closure with commit-conflict retries,
    /// returning the maintenance reports of the committed attempt.
    pub fn write_with<F>(&self, f: F) -> Result<Vec<ImpactReport>>
    where
        F: Fn(&Graph, &mut Transaction) -> Result<()>,
    {
        loop {
            self.maintainer.drain_reports();
            let mut tx = self.graph.begin(Mode::ReadWrite);
            f(&self.graph, &mut tx)?;
            match tx.commit() {
                Ok(_) => return Ok(self.maintainer.drain_reports()),
                Err(Error::Conflict) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn drain_cp(&self) -> Result<CpStats> {
        cp_drain(&self.graph, &self.cache, &self.queue, self.config.cp_retry_budget)
    }
}
