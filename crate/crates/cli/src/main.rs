//! `orbitmesh`: batch commands over the testbed core.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2 I/O error,
//! 3 internal error. Diagnostics go to stderr, one per line, as `code: message`.

mod config;
mod viz;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use orbitmesh::fabric::{bench_setup, emit_plan, new_backend, sequential_addressing, Addressing, BackendKind};
use orbitmesh::orchestrator::{Engine, ExperimentPlan, NoopHook, PlanError, RunError, RunMode};
use orbitmesh::topology::{LinkUpdate, MachineId};
use orbitmesh::tracegen::{generate_trace, replay_with, validate_trace, ReplayClock, Trace, TraceError};
use thiserror::Error;

use config::MainConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("internal: {0}")]
    Internal(String),
    /// Pre-formatted `code: message` lines.
    #[error("{}", .0.join("\n"))]
    Violations(Vec<String>),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Violations(_) => 1,
            CliError::Io(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Io(err) => CliError::Io(err.to_string()),
            TraceError::Invalid(v) => CliError::Violations(v.iter().map(ToString::to_string).collect()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Parse(msg) => CliError::Config(format!("plan: {msg}")),
            PlanError::Invalid(v) => CliError::Violations(v.iter().map(ToString::to_string).collect()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "orbitmesh", version, about = "LEO-edge network emulation testbed")]
struct Cli {
    /// Main configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Fabric RNG seed; overrides `fabric.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; stdout when omitted and the command allows it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Simulated,
    Wallclock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BenchBackends {
    Hash,
    Scan,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a trace from `--config` into `--out`.
    Trace,
    /// Replay a trace into a fabric; prints per-epoch update counts.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Directory for per-epoch, per-host configuration plans.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        device: Option<String>,
    },
    /// Time full-mesh link setup on the fabric backends.
    Bench {
        #[arg(long, value_enum, default_value = "both")]
        backend: BenchBackends,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Run an experiment plan; writes the event log CSV.
    Orchestrate {
        plan: PathBuf,
        /// Trace replayed into the fabric alongside the plan.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "simulated")]
        mode: Mode,
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Machine count when neither a trace nor a config provides one.
        #[arg(long)]
        machines: Option<usize>,
        /// External event as `SECONDS:NAME`; repeatable.
        #[arg(long = "inject")]
        inject: Vec<String>,
    },
    /// Render the constellation at time `--time` as SVG.
    Viz {
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
    /// Check a file without running anything.
    Validate {
        #[command(subcommand)]
        target: ValidateTarget,
    },
}

#[derive(Debug, Subcommand)]
enum ValidateTarget {
    Trace {
        path: PathBuf,
    },
    Plan {
        path: PathBuf,
    },
    /// The file given with `--config`.
    Config,
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| CliError::io(path, e)),
        None => io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn load_config(cli: &Cli) -> Result<Option<MainConfig>, CliError> {
    cli.config.as_deref().map(MainConfig::load).transpose()
}

fn require_config(cli: &Cli) -> Result<MainConfig, CliError> {
    load_config(cli)?.ok_or_else(|| CliError::config("this command needs --config"))
}

fn fabric_seed(cli: &Cli, config: Option<&MainConfig>) -> u64 {
    cli.seed.or(config.map(|c| c.fabric.seed)).unwrap_or(0)
}

fn cmd_trace(cli: &Cli) -> Result<(), CliError> {
    let config = require_config(cli)?;
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| CliError::config("trace needs --out"))?;
    let scenario = config.scenario()?;
    let trace = generate_trace(&scenario, config.trace.duration_s, config.trace.step_s)?;
    trace.write_file(out).map_err(|e| CliError::io(out, e))?;
    let violations = validate_trace(out).map_err(|e| CliError::io(out, e))?;
    if !violations.is_empty() {
        return Err(CliError::Internal(format!(
            "generated trace failed validation: {}",
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(())
}

fn write_plans(
    dir: &Path,
    epoch: usize,
    updates: &[LinkUpdate],
    device: &str,
    addressing: &Addressing,
) -> Result<(), CliError> {
    let mut hosts: Vec<MachineId> = updates.iter().flat_map(|u| [u.a, u.b]).collect();
    hosts.sort();
    hosts.dedup();
    for host in hosts {
        let plan = emit_plan(updates, host, device, addressing).map_err(|e| CliError::config(e.to_string()))?;
        let path = dir.join(format!("epoch-{epoch:05}-host-{:04}.plan", host.0));
        fs::write(&path, plan).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn cmd_replay(
    cli: &Cli,
    trace_path: &Path,
    backend: Option<BackendKind>,
    plan_out: Option<&Path>,
    device: Option<&str>,
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let trace = Trace::read_file(trace_path)?;
    let machines = trace.header.machines;
    if let Some(c) = &config {
        let scenario = c.scenario()?;
        if scenario.machines.len() != machines {
            return Err(CliError::config(format!(
                "trace has {machines} machines but the configuration selects {}",
                scenario.machines.len()
            )));
        }
        if scenario.config_hash(c.trace.duration_s, c.trace.step_s) != trace.header.config_hash {
            return Err(CliError::config("trace was generated from a different configuration"));
        }
    }
    let kind = backend
        .or(config.as_ref().map(|c| c.fabric.backend))
        .unwrap_or(BackendKind::Hash);
    let device = device
        .map(str::to_string)
        .or(config.as_ref().map(|c| c.fabric.device.clone()))
        .unwrap_or_else(|| "eth0".into());
    let addressing = match &config {
        Some(c) => c.addressing(machines)?,
        None => sequential_addressing(machines, config::AddressingConfig::default().base),
    };
    if let Some(dir) = plan_out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }

    let fabric = new_backend(kind, machines, fabric_seed(cli, config.as_ref()));
    let mut plan_error = None;
    let report = replay_with(&trace, fabric.as_ref(), ReplayClock::Simulated, |k, updates| {
        if let Some(dir) = plan_out {
            if let Err(e) = write_plans(dir, k, updates, &device, &addressing) {
                plan_error = Some(e);
                return Err(TraceError::InvalidParams("plan output failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = plan_error {
        return Err(e);
    }
    let report = report?;

    let mut csv = String::from("epoch,created,removed,modified\n");
    for e in &report.epochs {
        csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.created, e.removed, e.modified));
    }
    write_output(cli.out.as_deref(), csv.as_bytes())
}

fn cmd_bench(cli: &Cli, which: BenchBackends, sizes: &[usize], reps: usize) -> Result<(), CliError> {
    if let Some(&bad) = sizes.iter().find(|&&n| n < 2) {
        return Err(CliError::config(format!("bench size {bad} is below 2")));
    }
    let kinds: &[BackendKind] = match which {
        BenchBackends::Hash => &[BackendKind::Hash],
        BenchBackends::Scan => &[BackendKind::Scan],
        BenchBackends::Both => &[BackendKind::Hash, BackendKind::Scan],
    };
    let mut csv = String::from("backend,n,mean_ns,p50_ns,p99_ns,total_ns\n");
    for &kind in kinds {
        for &n in sizes {
            let s = bench_setup(kind, n, reps);
            csv.push_str(&format!(
                "{kind},{n},{:.1},{},{},{}\n",
                s.mean_ns, s.p50_ns, s.p99_ns, s.total_ns
            ));
        }
    }
    write_output(cli.out.as_deref(), csv.as_bytes())
}

fn parse_injection(text: &str) -> Result<(u64, String), CliError> {
    let bad = || CliError::config(format!("--inject expects SECONDS:NAME, got `{text}`"));
    let (secs, name) = text.split_once(':').ok_or_else(bad)?;
    let secs: f64 = secs.parse().map_err(|_| bad())?;
    if !(secs.is_finite() && secs >= 0.0) || name.is_empty() {
        return Err(bad());
    }
    Ok(((secs * 1e6).round() as u64, name.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_orchestrate(
    cli: &Cli,
    plan_path: &Path,
    trace_path: Option<&Path>,
    mode: Mode,
    backend: Option<BackendKind>,
    machines: Option<usize>,
    inject: &[String],
) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let text = fs::read_to_string(plan_path).map_err(|e| CliError::io(plan_path, e))?;
    let plan = ExperimentPlan::load(&text)?;
    let trace = trace_path.map(Trace::read_file).transpose()?;
    let count = match (&trace, machines, &config) {
        (Some(t), _, _) => t.header.machines,
        (None, Some(m), _) => m,
        (None, None, Some(c)) => c.scenario()?.machines.len(),
        (None, None, None) => return Err(CliError::config("orchestrate needs --trace, --machines or --config")),
    };
    let script = inject
        .iter()
        .map(|s| parse_injection(s))
        .collect::<Result<Vec<_>, _>>()?;

    let kind = backend
        .or(config.as_ref().map(|c| c.fabric.backend))
        .unwrap_or(BackendKind::Hash);
    let fabric = new_backend(kind, count, fabric_seed(cli, config.as_ref()));
    let mode = match mode {
        Mode::Simulated => RunMode::Simulated,
        Mode::Wallclock => RunMode::Wallclock,
    };
    let mut hook = NoopHook;
    let mut run = || -> Result<_, RunError> {
        let mut engine = Engine::new(&plan, mode, fabric.as_ref(), &mut hook)?;
        if let Some(t) = &trace {
            engine = engine.with_trace(t)?;
        }
        for (time_us, name) in &script {
            engine.schedule_injection(*time_us, name, None)?;
        }
        engine.finish()
    };
    match run() {
        Ok(log) => write_output(cli.out.as_deref(), log.to_csv_string().as_bytes()),
        Err(RunError::Aborted { record, log }) => {
            write_output(cli.out.as_deref(), log.to_csv_string().as_bytes())?;
            Err(CliError::Violations(vec![format!(
                "aborted: {} failed at {} us in rule {}",
                record.action, record.logical_time_us, record.rule
            )]))
        }
        Err(RunError::InvalidPlan(v)) => Err(CliError::Violations(v.iter().map(ToString::to_string).collect())),
        Err(RunError::Trace(e)) => Err(e.into()),
        Err(e @ RunError::Inject(_)) => Err(CliError::config(e.to_string())),
    }
}

fn cmd_viz(cli: &Cli, time: f64) -> Result<(), CliError> {
    let config = require_config(cli)?;
    let constellation = config.constellation()?;
    let svg = viz::render(&constellation, time).map_err(|e| CliError::config(e.to_string()))?;
    write_output(cli.out.as_deref(), svg.as_bytes())
}

fn cmd_validate(cli: &Cli, target: &ValidateTarget) -> Result<(), CliError> {
    match target {
        ValidateTarget::Trace { path } => {
            let violations = validate_trace(path).map_err(|e| CliError::io(path, e))?;
            if !violations.is_empty() {
                return Err(CliError::Violations(
                    violations.iter().map(ToString::to_string).collect(),
                ));
            }
        }
        ValidateTarget::Plan { path } => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            ExperimentPlan::load(&text)?;
        }
        ValidateTarget::Config => {
            let config = require_config(cli)?;
            let scenario = config.scenario()?;
            config.addressing(scenario.machines.len())?;
        }
    }
    write_output(None, b"ok\n")
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Trace => cmd_trace(cli),
        Command::Replay {
            trace,
            backend,
            plan_out,
            device,
        } => cmd_replay(cli, trace, *backend, plan_out.as_deref(), device.as_deref()),
        Command::Bench { backend, sizes, reps } => cmd_bench(cli, *backend, sizes, *reps),
        Command::Orchestrate {
            plan,
            trace,
            mode,
            backend,
            machines,
            inject,
        } => cmd_orchestrate(cli, plan, trace.as_deref(), *mode, *backend, *machines, inject),
        Command::Viz { time } => cmd_viz(cli, *time),
        Command::Validate { target } => cmd_validate(cli, target),
    }
}

/// Collapse a possibly multi-line message onto one line.
fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut stderr = io::stderr().lock();
            match &e {
                CliError::Violations(lines) => {
                    for l in lines {
                        let _ = writeln!(stderr, "{}", one_line(l));
                    }
                }
                other => {
                    let _ = writeln!(stderr, "{}", one_line(&other.to_string()));
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
