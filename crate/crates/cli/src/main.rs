//! `txpredict`: observe a workload, predict an unserializable execution,
//! replay it, and inspect histories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use txpredict_core::checker::{self, CheckError, IsolationLevel, Verdict};
use txpredict_core::predictor::{predict, PredictConfig, PredictOutcome, PredictedHistory, PredictionStrategy};
use txpredict_core::store::{run_workload, validate, ReadPolicy, Script, ValidationOutcome, ValidationReport, Workload};
use txpredict_core::trace_io::{emit_dot, emit_trace, parse_trace, DotOptions};
use txpredict_core::{build_history, Edge, ExecutionHistory, Trace};
use txpredict_solver::{backend_by_name, to_smtlib, Budget, BACKENDS};

const EXIT_UNSAT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNKNOWN: u8 = 3;
const EXIT_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "txpredict", version, about = "Predict unserializable executions of transactional workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload with every read observing the latest write and record the trace.
    Observe {
        #[command(flatten)]
        run: RunArgs,
        /// Trace output path (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for an unserializable execution near an observed trace.
    Predict {
        /// Observed trace.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "causal")]
        isolation: IsolationLevel,
        #[arg(long, default_value = "approx-relaxed")]
        strategy: PredictionStrategy,
        /// Predicted trace output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "native")]
        backend: String,
        /// Solver seed.
        #[arg(long, default_value_t = 0)]
        solver_seed: u64,
        /// Seconds before giving up with `unknown`.
        #[arg(long, env = "TXPREDICT_TIMEOUT")]
        timeout: Option<f64>,
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Write the grounded program in SMT-LIB2 syntax.
        #[arg(long)]
        dump_smt: Option<PathBuf>,
    },
    /// Replay a predicted trace against the workload that produced it.
    Validate {
        /// Predicted trace.
        #[arg(long)]
        prediction: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "causal")]
        isolation: IsolationLevel,
        /// Report output path (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Validating trace output path.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Check a trace for serializability and weak isolation conformance.
    Check {
        #[arg(long)]
        trace: PathBuf,
        /// Level deciding the exit code: serializable, causal or rc.
        #[arg(long, default_value = "serializable")]
        level: String,
        #[arg(long, env = "TXPREDICT_TIMEOUT")]
        timeout: Option<f64>,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Run a workload repeatedly with random legal reads and count unserializable runs.
    Fuzz {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "causal")]
        isolation: IsolationLevel,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a trace as a DOT graph.
    Render {
        #[arg(long)]
        trace: PathBuf,
        /// Include read and written values in node labels.
        #[arg(long)]
        values: bool,
        /// DOT output path (stdout if absent).
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Builtin workload name or path to a script.
    #[arg(long)]
    workload: String,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    sessions: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    txns: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

type CmdResult = Result<u8, Failure>;

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl RunArgs {
    fn workload(&self) -> Result<Workload, Failure> {
        if let Some(w) = Workload::builtin(&self.workload) {
            return Ok(w);
        }
        let path = Path::new(&self.workload);
        if !path.exists() {
            return Err(config(format!(
                "unknown workload `{}` (builtins: {})",
                self.workload,
                Workload::BUILTIN.join(", ")
            )));
        }
        let text = read(path)?;
        Script::parse(&text)
            .map(Workload::Scripted)
            .map_err(|e| config(format!("{}: {e}", path.display())))
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_trace(path: &Path) -> Result<Trace, Failure> {
    parse_trace(&read(path)?).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn load_history(path: &Path) -> Result<(Trace, ExecutionHistory), Failure> {
    let trace = load_trace(path)?;
    let history = build_history(&trace).map_err(|e| config(format!("{}: {e}", path.display())))?;
    Ok((trace, history))
}

fn budget(timeout: Option<f64>) -> Result<Budget, Failure> {
    match timeout {
        None => Ok(Budget::unlimited()),
        Some(s) if s.is_finite() && s > 0.0 => Ok(Budget::with_timeout(Duration::from_secs_f64(s))),
        Some(s) => Err(config(format!("timeout must be a positive number of seconds, got {s}"))),
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    s
}

fn edges_json(edges: &[Edge]) -> Value {
    Value::Array(
        edges
            .iter()
            .map(|e| json!({"from": e.from.0, "to": e.to.0, "label": e.label.to_string()}))
            .collect(),
    )
}

fn cmd_observe(run: &RunArgs, out: Option<&Path>) -> CmdResult {
    let workload = run.workload()?;
    let (trace, _) = run_workload(&workload, run.sessions, run.txns, run.seed, ReadPolicy::LatestWriter);
    write_or_print(out, &emit_trace(&trace))?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    trace: &Path,
    isolation: IsolationLevel,
    strategy: PredictionStrategy,
    out: Option<&Path>,
    backend: &str,
    solver_seed: u64,
    timeout: Option<f64>,
    dot: Option<&Path>,
    dump_smt: Option<&Path>,
) -> CmdResult {
    backend_by_name(backend, solver_seed)
        .map_err(|e| config(format!("{e} (available: {})", BACKENDS.join(", "))))?;
    let (_, obs) = load_history(trace)?;
    let cfg = PredictConfig {
        budget: budget(timeout)?,
        seed: solver_seed,
        ..PredictConfig::default()
    };
    if let Some(path) = dump_smt {
        let (program, _) = txpredict_core::predictor::build_program(&obs, isolation, strategy);
        write(path, &to_smtlib(&program))?;
    }
    let report = predict(&obs, isolation, strategy, &cfg).map_err(runtime)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut summary = json!({
        "result": report.outcome.label(),
        "strategy": strategy.name(),
        "isolation": isolation.name(),
        "literals": report.stats.literals,
        "gen_ms": report.stats.gen_ms,
        "solve_ms": report.stats.solve_ms,
        "iterations": report.stats.iterations,
    });
    let code = match &report.outcome {
        PredictOutcome::Prediction(p) => {
            if let Some(path) = out {
                write(path, &emit_trace(&p.to_trace()))?;
            }
            if let Some(path) = dot {
                write(path, &emit_dot(&p.history, p.cycle.as_deref(), DotOptions::default()))?;
            }
            summary["changed_reads"] = Value::Array(
                p.changed_reads
                    .iter()
                    .map(|c| {
                        json!({"reader": c.reader.0, "key": c.key.as_str(), "pos": c.pos,
                               "observed": c.observed.0, "predicted": c.predicted.0})
                    })
                    .collect(),
            );
            if let Some(cycle) = &p.cycle {
                summary["cycle"] = edges_json(cycle);
            }
            0
        }
        PredictOutcome::None => EXIT_UNSAT,
        PredictOutcome::Unknown(reason) => {
            summary["reason"] = json!(reason);
            EXIT_UNKNOWN
        }
    };
    print!("{}", pretty(&summary));
    Ok(code)
}

fn report_json(r: &ValidationReport) -> Value {
    json!({
        "outcome": r.outcome.tag(),
        "diverged": r.diverged,
        "divergences": r.divergences.iter().map(|d| json!({
            "tid": d.tid.0,
            "reason": d.reason.tag(),
            "detail": d.detail,
        })).collect::<Vec<_>>(),
        "final_values": r.final_values.iter().map(|(k, v)| (k.as_str().to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "transactions": r.validating_history.len() - 1,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate(
    prediction: &Path,
    run: &RunArgs,
    isolation: IsolationLevel,
    out: Option<&Path>,
    trace_out: Option<&Path>,
    dot: Option<&Path>,
) -> CmdResult {
    let workload = run.workload()?;
    let trace = load_trace(prediction)?;
    let predicted = PredictedHistory::from_trace(&trace).map_err(|e| config(format!("{}: {e}", prediction.display())))?;
    let report = validate(&predicted, &workload, run.sessions, run.txns, run.seed, isolation).map_err(config)?;
    if let Some(path) = trace_out {
        write(path, &emit_trace(&report.trace))?;
    }
    if let Some(path) = dot {
        write(path, &emit_dot(&report.validating_history, None, DotOptions::default()))?;
    }
    write_or_print(out, &pretty(&report_json(&report)))?;
    Ok(match report.outcome {
        ValidationOutcome::Unknown => EXIT_UNKNOWN,
        _ => 0,
    })
}

fn cmd_check(trace: &Path, level: &str, timeout: Option<f64>, dot: Option<&Path>) -> CmdResult {
    let (_, h) = load_history(trace)?;
    let verdict = checker::check_serializable_with(&h, &txpredict_solver::NativeBackend::default(), &budget(timeout)?);
    let causal = checker::check_causal(&h);
    let rc = checker::check_rc(&h);
    let serializable = match &verdict {
        Ok(v) => json!(v.is_serializable()),
        Err(CheckError::SolverUnknown(_)) => Value::Null,
        Err(e) => return Err(runtime(e)),
    };
    let mut out = json!({
        "transactions": h.len() - 1,
        "serializable": serializable,
        "causal": causal.conforms(),
        "rc": rc.conforms(),
    });
    if let Ok(Verdict::Serializable(co)) = &verdict {
        out["commit_order"] = json!(co.0.iter().map(|t| t.0).collect::<Vec<_>>());
    }
    let mut highlight = None;
    for (name, v) in [("causal_cycle", &causal), ("rc_cycle", &rc)] {
        if let Verdict::Violates(edges) = v {
            out[name] = edges_json(edges);
            highlight.get_or_insert(edges.clone());
        }
    }
    if let Some(path) = dot {
        write(path, &emit_dot(&h, highlight.as_deref(), DotOptions::default()))?;
    }
    print!("{}", pretty(&out));
    let ok = match level {
        "serializable" => match serializable {
            Value::Bool(b) => b,
            _ => return Ok(EXIT_UNKNOWN),
        },
        other => match other.parse::<IsolationLevel>().map_err(config)? {
            IsolationLevel::Causal => causal.conforms(),
            IsolationLevel::ReadCommitted => rc.conforms(),
        },
    };
    Ok(if ok { 0 } else { EXIT_UNSAT })
}

fn cmd_fuzz(run: &RunArgs, isolation: IsolationLevel, runs: u64, out: Option<&Path>) -> CmdResult {
    let workload = run.workload()?;
    let mut verdicts = Vec::new();
    let mut unserializable = 0u64;
    let mut unknown = 0u64;
    for i in 0..runs {
        let seed = run.seed.wrapping_add(i);
        let policy = ReadPolicy::RandomWeak { level: isolation, seed };
        let (_, h) = run_workload(&workload, run.sessions, run.txns, seed, policy);
        let verdict = match checker::check_serializable(&h) {
            Ok(Verdict::Serializable(_)) => "serializable",
            Ok(_) => {
                unserializable += 1;
                "unserializable"
            }
            Err(CheckError::SolverUnknown(_)) => {
                unknown += 1;
                "unknown"
            }
            Err(e) => return Err(runtime(e)),
        };
        verdicts.push(json!({"seed": seed, "verdict": verdict}));
    }
    let rate = if runs == 0 {
        Value::Null
    } else {
        json!(unserializable as f64 / runs as f64)
    };
    let stats = json!({
        "workload": workload.name(),
        "isolation": isolation.name(),
        "runs": runs,
        "unserializable": unserializable,
        "unknown": unknown,
        "unserializable_rate": rate,
        "verdicts": verdicts,
    });
    write_or_print(out, &pretty(&stats))?;
    Ok(0)
}

fn cmd_render(trace: &Path, values: bool, dot: Option<&Path>) -> CmdResult {
    let (_, h) = load_history(trace)?;
    write_or_print(dot, &emit_dot(&h, None, DotOptions { show_values: values }))?;
    Ok(0)
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Observe { run, out } => cmd_observe(&run, out.as_deref()),
        Command::Predict {
            trace,
            isolation,
            strategy,
            out,
            backend,
            solver_seed,
            timeout,
            dot,
            dump_smt,
        } => cmd_predict(
            &trace,
            isolation,
            strategy,
            out.as_deref(),
            &backend,
            solver_seed,
            timeout,
            dot.as_deref(),
            dump_smt.as_deref(),
        ),
        Command::Validate {
            prediction,
            run,
            isolation,
            out,
            trace_out,
            dot,
        } => cmd_validate(&prediction, &run, isolation, out.as_deref(), trace_out.as_deref(), dot.as_deref()),
        Command::Check {
            trace,
            level,
            timeout,
            dot,
        } => cmd_check(&trace, &level, timeout, dot.as_deref()),
        Command::Fuzz {
            run,
            isolation,
            runs,
            out,
        } => cmd_fuzz(&run, isolation, runs, out.as_deref()),
        Command::Render { trace, values, dot } => cmd_render(&trace, values, dot.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
