//! Benchmark and verification harness: engine assembly, data loading,
//! synthetic corpora, seeded workload traces, metrics, and the brute-force
//! consistency oracle.

pub mod engine;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod synth;
pub mod workload;

pub use engine::{Engine, EngineConfig};
pub use metrics::{compare, percentile, Comparison, LatencySummary, RunMetrics};
pub use oracle::{oracle_check, oracle_check_in, Violation};
pub use runner::{run_trace, RunOptions};
pub use synth::{graph_jsonl, random_write, templates_jsonl, ChangeRecorder, GraphModel, SynthSpec};
pub use workload::{generate, TraceOp, WorkloadSpec, WriteProfile};
