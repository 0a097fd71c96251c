//! The `pid` command-line tool.
//!
//! [`run`] parses arguments, dispatches one subcommand and returns the process
//! exit status: 0 on success, 1 on usage errors, 2 on runtime errors.

pub mod bench;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use pid_core::dist::{read_path, write_csv, write_json};
use pid_core::ecs::{run_scenario, run_sweep, ScenarioConfig, ScenarioKind, SimTrainer, SparseSpec};
use pid_core::oracle::{exact_solve, long_horizon_solve, DEFAULT_GRID_POINTS};
use pid_core::rng::derive_seed;
use pid_core::scheduler::{run as run_controller, write_probe_log, ControllerConfig, Metric, ProbeLogHeader};
use pid_core::solver::solve_with_init;
use pid_core::synth::{gen_gate, gen_gaussian, Gate, GaussianSpec};
use pid_core::{InitMethod, OracleResult, PidError, SolverConfig};

use bench::{run_bench, Suite};
use config::{expand_config, resolve_seed, sidecar_path, Metadata};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] PidError),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pid", version, about = "Partial information decomposition of discrete distributions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a distribution with FastPID.
    Solve(SolveArgs),
    /// Decompose a distribution with the reference oracle.
    Oracle(OracleArgs),
    /// Run FastPID and the oracle and report per-atom differences.
    Compare(CompareArgs),
    /// Write a synthetic distribution.
    Gen(GenArgs),
    /// Drive the unimodal training controller on a simulated trainer.
    Schedule(ScheduleArgs),
    /// Run a scripted modality-competition scenario.
    Simulate(SimulateArgs),
    /// Run a benchmark suite.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolverArgs {
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Projection sweeps per refinement step.
    #[arg(long, default_value_t = 10)]
    pub sinkhorn: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            lr: self.lr,
            tol: self.tol,
            sinkhorn_iter: self.sinkhorn,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Analytical,
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleArg {
    Exact,
    Long,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SolveArgs {
    /// Distribution file (`.json` or `.csv`).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "analytical")]
    pub init: InitArg,
    /// Seed for `--init gaussian` (falls back to PID_SEED).
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct OracleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    pub method: OracleArg,
    /// Grid points per coefficient for `--method exact`.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct CompareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value = "long")]
    pub method: OracleArg,
    /// Include wall-clock times (makes the output run-dependent).
    #[arg(long)]
    #[serde(skip)]
    pub timing: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[command(group(ArgGroup::new("source").required(true).args(["gate", "gaussian"])))]
#[serde(rename_all = "kebab-case")]
pub struct GenArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateArg>,
    /// Quantile-binned Gaussian task.
    #[arg(long)]
    pub gaussian: bool,
    #[arg(long, default_value_t = 16)]
    pub bins_x: usize,
    #[arg(long, default_value_t = 8)]
    pub bins_y: usize,
    #[arg(long, default_value_t = 500_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 0.8)]
    pub c2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub u1: f64,
    #[arg(long, default_value_t = 0.3)]
    pub u2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sigma: f64,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FileFormat,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GateArg {
    Xor,
    And,
    Or,
}

impl From<GateArg> for Gate {
    fn from(g: GateArg) -> Gate {
        match g {
            GateArg::Xor => Gate::Xor,
            GateArg::And => Gate::And,
            GateArg::Or => Gate::Or,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Pid,
    Mi,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct ScheduleArgs {
    /// `sim:desk` (imbalanced) or `sim:balanced`.
    #[arg(long, default_value = "sim:desk")]
    pub trainer: String,
    /// Threshold preset: `default` or `best`; the flags below override it.
    #[arg(long, default_value = "default")]
    pub preset: String,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_u: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_freq: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "pid")]
    pub metric: MetricArg,
    /// Quantizer clusters per modality.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioArg {
    Amplified,
    Persistent,
    Reversed,
    Breaking,
    Sweep,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    /// Number of classes.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Joint-training epochs after Stage I.
    #[arg(long, default_value_t = 0)]
    pub joint_epochs: usize,
    /// Longest Stage I run in the sweep.
    #[arg(long, default_value_t = 300)]
    pub sweep_max: usize,
    #[arg(long, default_value_t = 10)]
    pub sweep_step: usize,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
#[serde(rename_all = "kebab-case")]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FileFormat,
    /// Include per-row wall times (makes the output run-dependent).
    #[arg(long)]
    #[serde(skip)]
    pub timing: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if argv.len() <= 1 {
        let _ = write!(stderr, "{}", Cli::command_usage());
        return 1;
    }
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => return report(e, stderr),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => report(e, stderr),
    }
}

fn report(e: CliError, stderr: &mut dyn Write) -> i32 {
    let _ = writeln!(stderr, "error: {e}");
    if let CliError::Usage(_) = e {
        let _ = write!(stderr, "{}", Cli::command_usage());
    }
    e.exit_code()
}

impl Cli {
    fn command_usage() -> String {
        use clap::CommandFactory;
        Cli::command().render_help().to_string()
    }
}

type Seeds = BTreeMap<String, u64>;

/// Writes `bytes` to `out` plus its sidecar, or to standard output.
fn emit(out: Option<&Path>, bytes: &[u8], meta: &Metadata, stdout: &mut dyn Write) -> Result<(), CliError> {
    let Some(path) = out else {
        return stdout.write_all(bytes).map_err(|source| CliError::Write { path: "<stdout>".into(), source });
    };
    let write = |p: &Path, data: &[u8]| {
        std::fs::write(p, data).map_err(|source| CliError::Write { path: p.to_path_buf(), source })
    };
    write(path, bytes)?;
    let mut side = serde_json::to_vec_pretty(meta).map_err(PidError::from)?;
    side.push(b'\n');
    write(&sidecar_path(path), &side)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v).map_err(PidError::from)?;
    out.push(b'\n');
    Ok(out)
}

fn with_seed<T: Serialize>(command: &str, args: &T, seed: Option<u64>, seeds: Seeds) -> Metadata {
    let mut meta = Metadata::new(command, args, seeds);
    if let Some(s) = seed {
        meta.config.insert("seed".into(), json!(s));
    }
    meta
}

fn read_input(path: &Path) -> Result<pid_core::Joint3, CliError> {
    Ok(read_path(path)?)
}

fn oracle(p: &pid_core::Joint3, method: OracleArg, grid_points: usize) -> pid_core::Result<OracleResult> {
    match method {
        OracleArg::Exact => exact_solve(p, grid_points),
        OracleArg::Long => long_horizon_solve(p),
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Solve(a) => {
            let p = read_input(&a.input)?;
            let seed = resolve_seed(a.seed)?;
            let mut seeds = Seeds::new();
            let init = match a.init {
                InitArg::Analytical => InitMethod::Analytical,
                InitArg::Uniform => InitMethod::Uniform,
                InitArg::Gaussian => {
                    let s = derive_seed(seed, "solve/init");
                    seeds.insert("init".into(), s);
                    InitMethod::Gaussian { seed: s }
                }
            };
            let used_seed = matches!(a.init, InitArg::Gaussian).then_some(seed);
            let res = solve_with_init(&p, &a.solver.config(), init)?;
            emit(a.out.as_deref(), &pretty(&res)?, &with_seed("solve", &a, used_seed, seeds), stdout)
        }
        Command::Oracle(a) => {
            let p = read_input(&a.input)?;
            let res = oracle(&p, a.method, a.grid_points)?;
            emit(a.out.as_deref(), &pretty(&res)?, &with_seed("oracle", &a, None, Seeds::new()), stdout)
        }
        Command::Compare(a) => {
            let p = read_input(&a.input)?;
            let t0 = Instant::now();
            let fast = solve_with_init(&p, &a.solver.config(), InitMethod::Analytical)?;
            let fast_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let orc = oracle(&p, a.method, DEFAULT_GRID_POINTS)?;
            let orc_s = t1.elapsed().as_secs_f64();
            let fa = fast.atoms();
            let oa = orc.pid.atoms();
            let diff: Vec<f64> = fa.iter().zip(oa).map(|(x, y)| (x - y).abs()).collect();
            let mut body = json!({
                "fastpid": { "r": fa[0], "u1": fa[1], "u2": fa[2], "s": fa[3],
                             "iterations": fast.iters_used, "converged": fast.converged },
                "oracle": { "method": orc.method, "r": oa[0], "u1": oa[1], "u2": oa[2], "s": oa[3],
                            "iterations": orc.iterations },
                "abs_error": { "r": diff[0], "u1": diff[1], "u2": diff[2], "s": diff[3] },
                "mae": fast.mae(oa),
            });
            if a.timing {
                body["wall_time_s"] = json!({ "fastpid": fast_s, "oracle": orc_s });
            }
            emit(a.out.as_deref(), &pretty(&body)?, &with_seed("compare", &a, None, Seeds::new()), stdout)
        }
        Command::Gen(a) => {
            let (p, used_seed) = match a.gate {
                Some(g) => (gen_gate(g.into()), None),
                None => {
                    let seed = resolve_seed(a.seed)?;
                    let spec = GaussianSpec {
                        n_samples: a.samples,
                        c1: a.c1,
                        c2: a.c2,
                        u1: a.u1,
                        u2: a.u2,
                        noise_sigma: a.noise_sigma,
                        bins_x: a.bins_x,
                        bins_y: a.bins_y,
                        seed,
                    };
                    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                    (gen_gaussian(&spec)?, Some(seed))
                }
            };
            let mut buf = Vec::new();
            match a.format {
                FileFormat::Json => {
                    write_json(&p, &mut buf)?;
                    buf.push(b'\n');
                }
                FileFormat::Csv => write_csv(&p, &mut buf)?,
            }
            let seeds = used_seed.map(|s| Seeds::from([("gaussian".into(), s)])).unwrap_or_default();
            emit(a.out.as_deref(), &buf, &with_seed("gen", &a, used_seed, seeds), stdout)
        }
        Command::Schedule(a) => {
            let seed = resolve_seed(a.seed)?;
            let name = a
                .trainer
                .strip_prefix("sim:")
                .ok_or_else(|| CliError::Usage(format!("unsupported trainer {:?}; use sim:<name>", a.trainer)))?;
            let mut ctl = ControllerConfig::preset(&a.preset).map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(v) = a.tau_u {
                ctl.tau_u = v;
            }
            if let Some(v) = a.lambda_s {
                ctl.lambda_s = v;
            }
            if let Some(v) = a.probe_freq {
                ctl.probe_freq = v;
            }
            if let Some(v) = a.max_epochs {
                ctl.max_unimodal_epochs = v;
            }
            ctl.metric = match a.metric {
                MetricArg::Pid => Metric::Pid,
                MetricArg::Mi => Metric::Mi,
            };
            ctl.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let solver = a.solver.config();
            let trainer_seed = derive_seed(seed, "schedule/trainer");
            let quantizer_seed = derive_seed(seed, "schedule/quantizer");
            let mut trainer = SimTrainer::named(name, trainer_seed).map_err(|e| CliError::Usage(e.to_string()))?;
            let log = run_controller(&mut trainer, &ctl, &solver, a.k, quantizer_seed)?;
            let header = ProbeLogHeader { controller: ctl, solver, k: a.k, quantizer_seed };
            let mut buf = Vec::new();
            write_probe_log(&mut buf, &header, &log.state.history)?;
            let seeds = Seeds::from([("trainer".into(), trainer_seed), ("quantizer".into(), quantizer_seed)]);
            emit(a.out.as_deref(), &buf, &with_seed("schedule", &a, Some(seed), seeds), stdout)
        }
        Command::Simulate(a) => {
            let seed = resolve_seed(a.seed)?;
            let cfg = ScenarioConfig {
                spec: SparseSpec { k: a.k, ..Default::default() },
                joint_epochs: a.joint_epochs,
                ..Default::default()
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let buf = simulate(&a, &cfg, seed)?;
            emit(a.out.as_deref(), &buf, &with_seed("simulate", &a, Some(seed), Seeds::new()), stdout)
        }
        Command::Bench(a) => {
            let rep = run_bench(a.suite, a.timing)?;
            let mut buf = Vec::new();
            match a.format {
                FileFormat::Json => rep.write_json(&mut buf)?,
                FileFormat::Csv => rep.write_csv(&mut buf)?,
            }
            let seeds = rep.seeds.iter().map(|s| (format!("task-{s}"), *s)).collect();
            emit(a.out.as_deref(), &buf, &with_seed("bench", &a, None, seeds), stdout)
        }
    }
}

/// JSON lines: a header, then one line per epoch (or per sweep point).
fn simulate(a: &SimulateArgs, cfg: &ScenarioConfig, seed: u64) -> Result<Vec<u8>, CliError> {
    let mut lines = Vec::new();
    let kind = match a.scenario {
        ScenarioArg::Amplified => ScenarioKind::Amplified,
        ScenarioArg::Persistent => ScenarioKind::Persistent,
        ScenarioArg::Reversed => ScenarioKind::Reversed,
        ScenarioArg::Breaking => ScenarioKind::Breaking,
        ScenarioArg::Sweep => {
            let rows = run_sweep(cfg, seed, a.sweep_max, a.sweep_step)?;
            lines.push(json!({ "header": { "scenario": "sweep", "seed": seed, "k": a.k,
                                           "max_epochs": a.sweep_max, "step": a.sweep_step } }));
            lines.extend(rows.iter().map(|r| json!(r)));
            return jsonl(&lines);
        }
    };
    let rep = run_scenario(kind, cfg, seed)?;
    lines.push(json!({ "header": {
        "scenario": rep.scenario, "seed": rep.seed, "k": a.k, "winner": rep.winner,
        "stage1_modality": rep.stage1_modality, "stage1_epochs": rep.stage1_epochs,
        "labels": rep.labels, "label": rep.label,
    } }));
    let phases = [("stage1", Some(&rep.stage1)), ("joint", rep.joint.as_ref())];
    for (phase, traj) in phases {
        for rec in traj.into_iter().flat_map(|t| &t.records) {
            lines.push(json!({ "phase": phase, "epoch": rec.epoch, "loss": rec.loss,
                               "test_error": rec.test_error, "snapshot": rec.snapshot }));
        }
    }
    jsonl(&lines)
}

fn jsonl(lines: &[serde_json::Value]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut buf, l).map_err(PidError::from)?;
        buf.push(b'\n');
    }
    Ok(buf)
}
