use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use repro_core::action::Value;
use repro_core::batch;
use repro_core::config::RunConfig;
use repro_core::engine::{Engine, ExecutionPolicy, RunResult, Terminal};
use repro_core::metrics::{self, SuiteConfig, EXPECTED_TABLE};
use repro_core::planner::PlannerMode;
use repro_core::replay::{self, ForkSpec};
use repro_core::store::ArtifactStore;
use repro_core::trace::{ExecutionTrace, NodeStatus, TraceNode};
use repro_core::workload::{self, TrainerVariant, WorkloadConfig};

#[derive(Parser)]
#[command(name = "repro", version, about = "Run, replay, fork and inspect provenance-tracked workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Train,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the synthetic workflow and write its trace.
    Run {
        #[arg(long, value_parser = parse_planner)]
        planner: Option<PlannerMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        provenance: Option<Switch>,
        #[arg(long, value_enum)]
        inject_failure: Option<Stage>,
        /// TOML run configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Artifact store root (defaults to the trace file's directory).
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-materialize a trace's outputs from the store without executing.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Branch a trace at a node with modified parameters.
    Fork {
        trace: PathBuf,
        #[arg(long)]
        at: String,
        /// `<param>=<value>`, repeatable.
        #[arg(long = "set", value_name = "PARAM=VALUE", required = true)]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print a trace's nodes in topological order.
    Inspect {
        trace: PathBuf,
        /// Emit a Graphviz description instead.
        #[arg(long)]
        dot: bool,
    },
    /// Run the three-pipeline comparison and print the metrics table.
    Evaluate {
        #[arg(long, default_value_t = metrics::DEFAULT_RUNS)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the canonical JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_planner(s: &str) -> Result<PlannerMode, String> {
    s.parse::<PlannerMode>().map_err(|e| e.to_string())
}

enum Failure {
    /// Bad input, unreadable files, incomplete workflows.
    Operational(String),
    /// A verification or acceptance check did not hold.
    Violation(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Operational(_) => 1,
            Failure::Violation(_) => 2,
        }
    }
}

fn op(e: impl std::fmt::Display) -> Failure {
    Failure::Operational(e.to_string())
}

type Outcome = Result<String, (String, Failure)>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run {
            planner,
            seed,
            provenance,
            inject_failure,
            config,
            store,
            out,
        } => run(planner, seed, provenance, inject_failure, config, store, &out),
        Command::Replay { trace, verify, store } => replay_cmd(&trace, verify, store),
        Command::Fork {
            trace,
            at,
            set,
            out,
            store,
        } => fork_cmd(&trace, at, &set, &out, store),
        Command::Inspect { trace, dot } => inspect(&trace, dot),
        Command::Evaluate { runs, seed, report } => evaluate(runs, seed, report),
    };
    match outcome {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err((stdout, failure)) => {
            print!("{stdout}");
            let (Failure::Operational(msg) | Failure::Violation(msg)) = &failure;
            eprintln!("error: {msg}");
            ExitCode::from(failure.exit_code())
        }
    }
}

fn bare(failure: Failure) -> (String, Failure) {
    (String::new(), failure)
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| op(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| op(format!("{}: {e}", path.display())))
}

fn open_store(explicit: Option<PathBuf>, trace_path: &Path) -> Result<ArtifactStore, Failure> {
    let root = explicit.unwrap_or_else(|| match trace_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    });
    ArtifactStore::open(root).map_err(op)
}

fn load_trace(path: &Path) -> Result<ExecutionTrace, Failure> {
    ExecutionTrace::load(&read(path)?).map_err(|e| op(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn run(
    planner: Option<PlannerMode>,
    seed: Option<u64>,
    provenance: Option<Switch>,
    inject_failure: Option<Stage>,
    config: Option<PathBuf>,
    store: Option<PathBuf>,
    out: &Path,
) -> Outcome {
    let mut cfg = match &config {
        Some(path) => {
            let text = String::from_utf8(read(path).map_err(bare)?)
                .map_err(|e| bare(op(format!("{}: {e}", path.display()))))?;
            toml::from_str::<RunConfig>(&text).map_err(|e| bare(op(format!("{}: {e}", path.display()))))?
        }
        None => RunConfig::default(),
    };
    if let Some(p) = planner {
        cfg.planner = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = provenance {
        cfg.provenance = matches!(p, Switch::On);
    }
    if let Some(Stage::Train) = inject_failure {
        cfg.inject_failure = Some("train".to_string());
    }
    let spec = cfg.to_run_spec().map_err(|e| bare(op(e)))?;
    let store = open_store(store, out).map_err(bare)?;
    let result = batch::execute(&spec, &store).map_err(|e| bare(op(e)))?;

    let mut text = summary(&spec.trace_id, &result);
    match &result.trace {
        Some(trace) => {
            write(out, &trace.save()).map_err(bare)?;
            let _ = writeln!(text, "trace: {}", out.display());
        }
        None => text.push_str("trace: none (provenance off)\n"),
    }
    if result.terminal != Terminal::Done {
        return Err((text, op(format!("workflow ended with {}", result.terminal))));
    }
    Ok(text)
}

fn summary(trace_id: &str, result: &RunResult) -> String {
    let mut text = format!(
        "run: trace_id={trace_id} terminal={} iterations={} executed={} logged={}\n",
        result.terminal,
        result.iterations_used,
        result.executed_count,
        result.logged_count()
    );
    for line in &result.diagnostics {
        let _ = writeln!(text, "diagnostic: {line}");
    }
    for (name, hash) in &result.final_outputs {
        let _ = writeln!(text, "artifact: {name} {hash}");
    }
    text
}

fn replay_cmd(path: &Path, verify: bool, store: Option<PathBuf>) -> Outcome {
    let trace = load_trace(path).map_err(bare)?;
    let store = open_store(store, path).map_err(bare)?;
    let mut result = replay::replay(&trace, &store).map_err(|e| bare(op(e)))?;
    let mut text = String::new();
    for id in &result.order {
        for (name, hash) in &result.outputs[id] {
            let _ = writeln!(text, "{id} {name} {hash}");
        }
    }
    if !verify {
        let _ = writeln!(text, "replay: nodes={} dispatches={}", result.order.len(), result.dispatch_count);
        return Ok(text);
    }
    let bit = result.verify(&trace, &store);
    let _ = writeln!(text, "replay: identical={bit} dispatches={}", result.dispatch_count);
    if bit != 1 {
        return Err((text, Failure::Violation("replayed artifacts differ from the trace".into())));
    }
    Ok(text)
}

/// Planner recorded in the trace's actions (history-fed if absent).
fn planner_of(trace: &ExecutionTrace) -> PlannerMode {
    trace
        .nodes()
        .iter()
        .find_map(|n| n.action.metadata().planner_config.get("planner"))
        .and_then(|p| p.parse().ok())
        .unwrap_or(PlannerMode::HistoryFed)
}

/// Trainer the trace was recorded with, from its environment bindings.
fn trainer_of(trace: &ExecutionTrace) -> TrainerVariant {
    let train_versions: Vec<&str> = trace
        .environments()
        .values()
        .filter_map(|b| b.adapter_versions.get("train").map(String::as_str))
        .collect();
    if train_versions.iter().any(|v| v.contains("fault-injection")) {
        TrainerVariant::FaultInjection
    } else {
        TrainerVariant::Standard
    }
}

/// Workload parameters as recorded on the trace's actions.
fn workload_of(trace: &ExecutionTrace) -> WorkloadConfig {
    let mut cfg = WorkloadConfig::default();
    for node in trace.nodes() {
        let p = |name: &str| node.action.parameter(name);
        match node.action.action_type() {
            "load_data" => {
                if let Some(v) = p("seed").and_then(Value::as_i64) {
                    cfg.seed = v as u64;
                }
                if let Some(v) = p("n_rows").and_then(Value::as_i64) {
                    cfg.n_rows = v as u64;
                }
            }
            "train" => {
                if let Some(v) = p("learning_rate").and_then(Value::as_f64) {
                    cfg.learning_rate = v;
                }
                if let Some(v) = p("iterations").and_then(Value::as_i64) {
                    cfg.iterations = v as u64;
                }
            }
            _ => {}
        }
    }
    cfg
}

fn fork_cmd(path: &Path, at: String, set: &[String], out: &Path, store: Option<PathBuf>) -> Outcome {
    let source = load_trace(path).map_err(bare)?;
    let mut modifications = BTreeMap::new();
    for item in set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| bare(op(format!("--set expects PARAM=VALUE, got {item:?}"))))?;
        modifications.insert(key.to_string(), Value::parse_loose(value));
    }
    let spec = ForkSpec {
        source_trace: source.trace_id().to_string(),
        at_node: at,
        modifications,
    };
    let store = open_store(store, path).map_err(bare)?;
    let engine = Engine::new(Arc::new(workload::registry(trainer_of(&source))), store);
    let planner = planner_of(&source).build(workload_of(&source));
    let result =
        replay::fork(&spec, &source, &engine, planner.as_ref(), ExecutionPolicy::default()).map_err(|e| bare(op(e)))?;
    let branch = result.trace.as_ref().expect("forks run with provenance");
    let mut text = summary(branch.trace_id(), &result);
    let _ = writeln!(text, "fork: at={} dispatches={}", spec.at_node, engine.registry().dispatch_count());
    write(out, &branch.save()).map_err(|f| (text.clone(), f))?;
    let _ = writeln!(text, "trace: {}", out.display());
    if result.terminal != Terminal::Done {
        return Err((text, op(format!("forked workflow ended with {}", result.terminal))));
    }
    Ok(text)
}

fn describe(node: &TraceNode) -> String {
    let outputs: Vec<String> = node
        .outputs
        .iter()
        .map(|(name, hash)| format!("{name}:{}", hash.short()))
        .collect();
    let mut line = format!(
        "{} {} {} t={}..{} parents=[{}] outputs=[{}]",
        node.node_id,
        node.action.action_type(),
        node.status,
        node.started_at,
        node.finished_at,
        node.parents.join(","),
        outputs.join(",")
    );
    if let Some(failure) = &node.failure {
        let partial: Vec<&str> = failure.partial_outputs.keys().map(String::as_str).collect();
        let _ = write!(
            line,
            " failure={} partial=[{}] context={:?}",
            failure.failure_type,
            partial.join(","),
            failure.error_context
        );
    }
    if let Some(target) = &node.recovery_of {
        let _ = write!(line, " recovery_of={target}");
    }
    line
}

fn inspect(path: &Path, dot: bool) -> Outcome {
    let trace = load_trace(path).map_err(bare)?;
    let order = trace.topo_order();
    let mut text = String::new();
    if dot {
        let _ = writeln!(text, "digraph {:?} {{", trace.trace_id());
        for id in &order {
            let node = trace.node(id).expect("topo order lists trace nodes");
            let style = match node.status {
                NodeStatus::Success => "solid",
                NodeStatus::Failed => "bold",
                NodeStatus::Replayed => "dashed",
            };
            let _ = writeln!(
                text,
                "  {:?} [label={:?}, style={style}];",
                id,
                format!("{id}\n{}\n{}", node.action.action_type(), node.status)
            );
        }
        for id in &order {
            let node = trace.node(id).expect("topo order lists trace nodes");
            for parent in &node.parents {
                let _ = writeln!(text, "  {parent:?} -> {id:?};");
            }
            if let Some(target) = &node.recovery_of {
                let _ = writeln!(text, "  {id:?} -> {target:?} [style=dotted, label=\"recovers\"];");
            }
        }
        text.push_str("}\n");
        return Ok(text);
    }
    let _ = writeln!(
        text,
        "trace {} nodes={} rejections={}",
        trace.trace_id(),
        trace.len(),
        trace.rejections().len()
    );
    if let Some(origin) = trace.fork_of() {
        let _ = writeln!(text, "fork_of {} at {}", origin.parent_trace, origin.divergence_node);
    }
    for id in &order {
        let _ = writeln!(text, "{}", describe(trace.node(id).expect("topo order lists trace nodes")));
    }
    for r in trace.rejections() {
        let _ = writeln!(text, "rejected t={} {} {}: {}", r.logical_timestamp, r.action_type, r.kind, r.detail);
    }
    Ok(text)
}

fn evaluate(runs: usize, seed: Option<u64>, report: Option<PathBuf>) -> Outcome {
    let mut cfg = SuiteConfig {
        runs,
        ..SuiteConfig::default()
    };
    if let Some(s) = seed {
        cfg.workload.seed = s;
    }
    let rows = metrics::run_experiment_suite(&cfg, &ArtifactStore::in_memory()).map_err(|e| bare(op(e)))?;
    let text = metrics::render_table(&rows);
    if let Some(path) = report {
        write(&path, &metrics::report_bytes(&rows)).map_err(|f| (text.clone(), f))?;
    }
    if rows != EXPECTED_TABLE {
        return Err((text, Failure::Violation("metrics differ from the reference table".into())));
    }
    Ok(text)
}
