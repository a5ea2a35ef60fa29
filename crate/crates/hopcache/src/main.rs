//! Command-line harness around the embedded engine: data loading, template
//! lifecycle, benchmark runs, the consistency oracle, and run comparison.
//! Output is JSON on stdout; diagnostics go to stderr.

use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use hopcache::coordinator::{Cluster, FaultSchedule};
use hopcache::error::{Error, Result};
use hopcache::harness::{
    compare, generate, oracle_check, run_trace, Engine, EngineConfig, GraphModel, RunOptions,
    SynthSpec, WorkloadSpec,
};
use hopcache::kvstore::Store;
use hopcache::maintenance::MaintenancePolicy;
use hopcache::templates::parse_template;

#[derive(Parser)]
#[command(name = "hopcache", about = "Property-graph engine with a transactional sub-query cache")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and ingest a graph file, reporting what was loaded.
    Load { graph: String },
    /// Template lifecycle over a simulated 3-node cluster.
    Template {
        #[command(subcommand)]
        verb: TemplateVerb,
    },
    /// Execute a workload trace and emit run metrics.
    Run(RunArgs),
    /// Run a workload, then audit every cache entry against a recompute.
    Oracle(OracleArgs),
    /// Compare two metrics files (baseline first).
    Report { baseline: String, candidate: String },
}

#[derive(Subcommand)]
enum TemplateVerb {
    /// Register every template in the file.
    Register {
        #[arg(long)]
        templates: String,
    },
    /// Register all, then run the two-phase enable for one template.
    Enable {
        name: String,
        #[arg(long)]
        templates: String,
    },
    /// Register all, enable, then run the two-phase disable for one template.
    Disable {
        name: String,
        #[arg(long)]
        templates: String,
    },
    /// Register all and print each template's lifecycle state.
    Status {
        #[arg(long)]
        templates: String,
    },
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Graph file (newline-delimited JSON); synthesized when omitted.
    #[arg(long)]
    graph: Option<String>,
    /// Template file (newline-delimited JSON); built-in set when omitted.
    #[arg(long)]
    templates: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Workload spec file; use --mix for a named preset instead.
    #[arg(long)]
    workload: Option<String>,
    /// Named mix preset: r-hat, w-hat, or r-check.
    #[arg(long, conflicts_with = "workload")]
    mix: Option<String>,
    /// Trace length for --mix presets.
    #[arg(long, default_value_t = 10_000)]
    ops: u64,
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    cache: String,
    #[arg(long, default_value = "on", value_parser = ["on", "off"])]
    rewrite: String,
    #[arg(long, default_value = "write-around")]
    policy: String,
    /// Overrides the workload spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Injected per-kvstore-op delay in microseconds.
    #[arg(long, default_value_t = 0)]
    op_delay_us: u64,
    /// Execute each read cached and uncached at one snapshot; count diffs.
    #[arg(long)]
    check_diffs: bool,
    /// Run the consistency oracle every N operations.
    #[arg(long)]
    oracle_every: Option<u64>,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "r-check")]
    mix: String,
    #[arg(long, default_value_t = 5_000)]
    ops: u64,
    #[arg(long, default_value = "write-around")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Load { graph } => {
            let mut engine = Engine::new(EngineConfig::default())?;
            let text = read_file(&graph)?;
            let (v, e) = engine.load_graph(&text)?;
            println!("{}", serde_json::json!({ "loaded": { "vertices": v, "edges": e } }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Template { verb } => template_verb(verb),
        Command::Run(args) => run_cmd(args),
        Command::Oracle(args) => oracle_cmd(args),
        Command::Report { baseline, candidate } => {
            let a = hopcache::harness::RunMetrics::from_json(&read_file(&baseline)?)?;
            let b = hopcache::harness::RunMetrics::from_json(&read_file(&candidate)?)?;
            let c = compare(&a, &b);
            println!("{}", serde_json::to_string_pretty(&c).expect("comparison serialize"));
            eprintln!(
                "{:<24} {:>12} {:>12} {:>8}",
                "metric", &c.label_a, &c.label_b, "factor"
            );
            for (label, va, vb, f) in [
                ("read p50 (us)", a.read_latency.p50_us, b.read_latency.p50_us, c.read_p50_factor),
                ("read p95 (us)", a.read_latency.p95_us, b.read_latency.p95_us, c.read_p95_factor),
                ("read p99 (us)", a.read_latency.p99_us, b.read_latency.p99_us, c.read_p99_factor),
                (
                    "write p95 (us)",
                    a.write_latency.p95_us,
                    b.write_latency.p95_us,
                    c.write_p95_factor,
                ),
            ] {
                eprintln!("{label:<24} {va:>12} {vb:>12} {f:>8.3}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_file(path: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidSpec(format!("{path}: {e}")))
}

fn template_verb(verb: TemplateVerb) -> Result<ExitCode> {
    let templates_path = match &verb {
        TemplateVerb::Register { templates }
        | TemplateVerb::Status { templates }
        | TemplateVerb::Enable { templates, .. }
        | TemplateVerb::Disable { templates, .. } => templates.clone(),
    };
    let mut cluster = Cluster::new(Store::open(), 3);
    let mut names = Vec::new();
    for line in read_file(&templates_path)?.lines().filter(|l| !l.trim().is_empty()) {
        let template = Arc::new(parse_template(line)?);
        names.push(template.name.clone());
        cluster.register_template(template)?;
    }
    let mut faults = FaultSchedule::default();
    match &verb {
        TemplateVerb::Register { .. } | TemplateVerb::Status { .. } => {}
        TemplateVerb::Enable { name, .. } => {
            cluster.enable_template(name, &mut faults)?;
        }
        TemplateVerb::Disable { name, .. } => {
            cluster.enable_template(name, &mut faults)?;
            cluster.disable_template(name, &mut faults)?;
        }
    }
    for (name, state) in &cluster.transitions {
        println!("{}", serde_json::json!({ "transition": { "template": name, "state": format!("{state:?}") } }));
    }
    for name in &names {
        let state = cluster.state(name).map(|s| format!("{s:?}"));
        println!("{}", serde_json::json!({ "template": name, "state": state }));
    }
    println!(
        "{}",
        serde_json::json!({
            "safety_violations": cluster.safety_violations,
            "removed": cluster.removed,
        })
    );
    Ok(ExitCode::SUCCESS)
}

struct BuiltEngine {
    engine: Engine,
    model: GraphModel,
}

fn build_engine(
    corpus: &CorpusArgs,
    policy: &str,
    cache_on: bool,
    rewrite_on: bool,
    op_delay_us: u64,
) -> Result<BuiltEngine> {
    let config = EngineConfig {
        policy: MaintenancePolicy::parse(policy)?,
        use_cache: cache_on,
        use_rewrite: rewrite_on,
        op_delay: (op_delay_us > 0).then(|| Duration::from_micros(op_delay_us)),
        unique_props: vec!["sku".to_string()],
        ..Default::default()
    };
    let mut engine = Engine::new(config)?;
    let graph_text = match &corpus.graph {
        Some(p) => read_file(p)?,
        None => hopcache::harness::graph_jsonl(SynthSpec::default()),
    };
    engine.load_graph(&graph_text)?;
    let template_text = match &corpus.templates {
        Some(p) => read_file(p)?,
        None => hopcache::harness::templates_jsonl().to_string(),
    };
    engine.register_and_enable_templates(&template_text)?;
    let model = GraphModel::scan(&engine.graph)?;
    Ok(BuiltEngine { engine, model })
}

fn run_cmd(args: RunArgs) -> Result<ExitCode> {
    let mut spec = match (&args.workload, &args.mix) {
        (Some(path), _) => WorkloadSpec::from_json(&read_file(path)?)?,
        (None, Some(mix)) => WorkloadSpec::named(mix, args.ops, args.seed.unwrap_or(0))?,
        (None, None) => {
            return Err(Error::InvalidSpec("run needs --workload or --mix".into()));
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let built = build_engine(
        &args.corpus,
        &args.policy,
        args.cache == "on",
        args.rewrite == "on",
        args.op_delay_us,
    )?;
    let trace = generate(&spec, &built.model)?;
    let label = format!(
        "C{}Q{} {} seed={}",
        if args.cache == "on" { "+" } else { "-" },
        if args.rewrite == "on" { "+" } else { "-" },
        args.policy,
        spec.seed
    );
    let opts = RunOptions { label, check_diffs: args.check_diffs, oracle_every: args.oracle_every };
    let metrics = run_trace(&built.engine, &trace, &opts)?;
    let text = metrics.to_json();
    match &args.out {
        Some(path) => {
            fs::write(path, &text).map_err(|e| Error::InvalidSpec(format!("{path}: {e}")))?;
            eprintln!("metrics written to {path}");
        }
        None => println!("{text}"),
    }
    let failed = metrics.result_diffs > 0 || metrics.oracle_violations > 0;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn oracle_cmd(args: OracleArgs) -> Result<ExitCode> {
    let built = build_engine(&args.corpus, &args.policy, true, true, 0)?;
    let spec = WorkloadSpec::named(&args.mix, args.ops, args.seed)?;
    let trace = generate(&spec, &built.model)?;
    run_trace(&built.engine, &trace, &RunOptions::default())?;
    let violations = oracle_check(&built.engine.graph, &built.engine.cache, &built.engine.registry)?;
    for v in &violations {
        println!("{}", serde_json::to_string(v).expect("violation serialize"));
    }
    println!("{}", serde_json::json!({ "violations": violations.len() }));
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
