//! Drives a generated trace through an engine, collecting latencies, cache
//! counters, impacted-key histograms, and optional per-operation
//! cached-vs-uncached diffs and oracle checkpoints.

use std::time::Instant;

use crate::error::Result;

use super::engine::Engine;
use super::metrics::{LatencySummary, RunMetrics};
use super::oracle::oracle_check;
use super::workload::TraceOp;

#[derive(Clone)]
pub struct RunOptions {
    pub label: String,
    /// Execute every read twice (cached and uncached) at one snapshot and
    /// count divergences.
    pub check_diffs: bool,
    /// Run the consistency oracle every N operations (and once at the end).
    pub oracle_every: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { label: String::new(), check_diffs: false, oracle_every: None }
    }
}

fn record_error(m: &mut RunMetrics, e: &crate::error::Error) {
    use crate::error::Error;
    let kind = match e {
        Error::Conflict => "conflict",
        Error::MalformedValue(_) => "malformed",
        Error::Syntax { .. } => "syntax",
        Error::NotFound(_) => "not-found",
        _ => "other",
    };
    m.errors += 1;
    *m.errors_by_kind.entry(kind.to_string()).or_insert(0) += 1;
}

pub fn run_trace(engine: &Engine, trace: &[TraceOp], opts: &RunOptions) -> Result<RunMetrics> {
    let mut m = RunMetrics { label: opts.label.clone(), ..Default::default() };
    let mut read_samples = Vec::new();
    let mut write_samples = Vec::new();

    for (i, op) in trace.iter().enumerate() {
        // per-op failures are aggregated into the metrics, not thrown
        match op {
            TraceOp::Read(text) => {
                let start = Instant::now();
                let outcome = if opts.check_diffs {
                    engine.read_with_diff(text).map(|(_, stats, diverged)| {
                        if diverged {
                            m.result_diffs += 1;
                        }
                        stats
                    })
                } else {
                    engine.read(text).map(|(_, stats)| stats)
                };
                read_samples.push(start.elapsed().as_micros() as u64);
                m.reads += 1;
                match outcome {
                    Ok(stats) => {
                        m.cache_hits += stats.cache_hits;
                        m.cache_misses += stats.cache_misses;
                        m.fallback_roots += stats.fallback_roots;
                        for (name, (h, mis)) in stats.per_template {
                            let slot = m.per_template.entry(name).or_default();
                            slot.0 += h;
                            slot.1 += mis;
                        }
                    }
                    Err(e) => record_error(&mut m, &e),
                }
            }
            TraceOp::Write(op) => {
                let start = Instant::now();
                let outcome = engine.rmw(op);
                write_samples.push(start.elapsed().as_micros() as u64);
                m.writes += 1;
                match outcome {
                    Ok((_, reports)) => {
                        for r in reports {
                            let touched = (r.keys_deleted.len()
                                + r.values_edited.len()
                                + r.entries_refilled.len())
                                as u64;
                            *m.impacted_keys
                                .entry(r.kind)
                                .or_default()
                                .entry(touched)
                                .or_insert(0) += 1;
                            m.ranges_cleared += r.ranges_cleared.len() as u64;
                        }
                    }
                    Err(e) => record_error(&mut m, &e),
                }
            }
        }
        let cp = engine.drain_cp()?;
        m.cp_populated += cp.populated;
        m.cp_discarded += cp.discarded_after_retries;
        if let Some(every) = opts.oracle_every {
            if every > 0 && (i as u64 + 1) % every == 0 {
                m.oracle_violations +=
                    oracle_check(&engine.graph, &engine.cache, &engine.registry)?.len() as u64;
            }
        }
    }
    if opts.oracle_every.is_some() {
        m.oracle_violations +=
            oracle_check(&engine.graph, &engine.cache, &engine.registry)?.len() as u64;
    }
    m.queue_dropped = engine.queue.dropped_full.load(std::sync::atomic::Ordering::Relaxed);
    m.ops = m.reads + m.writes;
    m.read_latency = LatencySummary::from_samples(&mut read_samples);
    m.write_latency = LatencySummary::from_samples(&mut write_samples);
    Ok(m)
}
