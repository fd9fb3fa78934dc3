//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 1 a check failed or a run diverged, 2 usage or
//! configuration error, 3 I/O error.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, SafeBounds, Setting};
use crate::diagnostics::{
    check_abstract_conditions, check_descent_lemma, check_gd_bound, check_lyapunov_monotone,
    check_prop_no_lower_bound, check_theorem1, check_theorem2,
};
use crate::engine::{run, Algorithm, Noise, RunConfig, StopReason, Trace};
use crate::error::{Error, Result};
use crate::klrates::{figure1_experiment, Figure1Algorithm, Figure1Options};
use crate::stepsize::{policy_alpha, PolicyKind};
use crate::types::{ClipFloor, HyperParams};

pub use config::{applicable_checks, parse_spec, parse_spec_with, CheckKind, ExperimentSpec, RunSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bounded-adam", version, about = "Adaptive momentum optimizers with clipped step sizes")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute an experiment file.
    Run(RunArgs),
    /// Print safe step-size bounds and the hypothesis checklist.
    Bounds(BoundsArgs),
    /// Run the |x|^p rate experiment and write one CSV per cell.
    Figure1(Figure1Args),
    /// Re-check a stored trace CSV against its run report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment file (TOML).
    config: Option<PathBuf>,
    /// Attach every applicable check to runs that list none.
    #[arg(long)]
    verify: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the file's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    /// Gradient Lipschitz constant L.
    #[arg(long = "lipschitz", short = 'L')]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.1)]
    b: f64,
    #[arg(long, default_value_t = 1e-3)]
    c: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value = "adam")]
    policy: PolicyKind,
    /// Override the growth constant α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Absolute clip floor.
    #[arg(long, conflicts_with = "delta_fraction")]
    delta: Option<f64>,
    /// Clip floor as a fraction of the bound.
    #[arg(long)]
    delta_fraction: Option<f64>,
    #[arg(long)]
    stochastic: bool,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct Figure1Args {
    #[arg(long, default_value = "figure1")]
    out_dir: PathBuf,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated exponents.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// Comma-separated subset of clipped_adam, adam_unclipped, gd.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Figure1Algorithm>>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    trace: PathBuf,
    /// The run's `.report.json`.
    report: PathBuf,
    /// Checks to run (default: those recorded in the report).
    #[arg(long = "check", value_delimiter = ',')]
    checks: Vec<String>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Csv(c) if c.is_io_error() => EXIT_IO,
        Error::Divergence { .. } => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    run_cli(std::env::args_os())
}

pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Some(Command::Run(a)) => cmd_run(a),
        Some(Command::Bounds(a)) => cmd_bounds(a),
        Some(Command::Figure1(a)) => cmd_figure1(a),
        Some(Command::Verify(a)) => cmd_verify(a),
        None => cmd_run(cli.run),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::usage("--jobs must be >= 1"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::usage(e.to_string()))?;
    Ok(pool.install(f))
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let path = args
        .config
        .ok_or_else(|| Error::usage("no experiment file given (try `bounded-adam run <file>`)"))?;
    let text = fs::read_to_string(&path)?;
    let mut spec = parse_spec_with(&text, args.verify, args.seed)?;
    if let Some(dir) = args.out_dir {
        spec.out_dir = dir;
    }
    let jobs = args.jobs.or(spec.jobs);
    let outcome = with_pool(jobs, || execute(&spec))??;
    for r in &outcome.runs {
        let checks = r
            .checks
            .iter()
            .map(|c| format!("{}={}", c.check, if c.passed { "ok" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join(" ");
        println!("{:<24} {:<10} f={:<24e} {}", r.name, r.status, r.terminal_f, checks);
    }
    Ok(if outcome.all_passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: CheckKind,
    pub passed: bool,
    pub report: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Divergence {
    pub trial: usize,
    pub iteration: usize,
    pub reason: String,
}

/// Contents of `<name>.report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub config: RunConfig,
    pub bounds: Option<SafeBounds>,
    pub status: RunStatus,
    pub divergence: Option<Divergence>,
    pub trials: usize,
    pub iterations: usize,
    pub terminal_f: f64,
    pub stop_reason: StopReason,
    pub floor_overrides: usize,
    pub wall_time_secs: f64,
    /// Sampled index and `‖∇F(x_τ)‖²` per trial (stochastic runs).
    pub tau_samples: Vec<(usize, f64)>,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub status: RunStatus,
    pub iterations: usize,
    pub terminal_f: f64,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    pub all_passed: bool,
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Evaluate single-trace checks. The stochastic bound needs all trials and
/// is handled by [`stochastic_check`].
pub fn evaluate_checks(trace: &Trace, checks: &[CheckKind]) -> Result<Vec<CheckOutcome>> {
    let cfg = &trace.config;
    let hp = &cfg.hp;
    let l = cfg.objective.lipschitz;
    let inf_f = cfg.objective.infimum;
    let h0 = trace.h0();
    let bounds = || {
        trace
            .bounds
            .clone()
            .or_else(|| cfg.safe_bounds())
            .ok_or_else(|| Error::usage("check needs step-size bounds, but the run is not a momentum run"))
    };
    let mut out = Vec::new();
    for &check in checks {
        let (passed, report) = match check {
            CheckKind::Monotone => {
                let r = check_lyapunov_monotone(trace);
                (r.holds(), to_value(&r)?)
            }
            CheckKind::DescentLemma => {
                let sb = bounds()?;
                let r = check_descent_lemma(trace, l, hp.momentum, sb.alpha, hp.theorem_margin)?;
                (!r.violated, to_value(&r)?)
            }
            CheckKind::RateBound => {
                let r = check_theorem1(trace, &bounds()?, hp, h0, inf_f);
                (r.holds(), to_value(&r)?)
            }
            CheckKind::UpperClipBound => {
                let r = check_prop_no_lower_bound(trace, hp, &bounds()?, h0, inf_f)?;
                (r.all_hold, to_value(&r)?)
            }
            CheckKind::GdBound => {
                let Algorithm::GradientDescent { step } = cfg.algorithm else {
                    return Err(Error::usage("gd_bound applies to gradient-descent runs only"));
                };
                let r = check_gd_bound(trace, step, l, inf_f)?;
                (r.all_hold, to_value(&r)?)
            }
            CheckKind::AbstractConditions => {
                let r = check_abstract_conditions(trace, hp, &bounds()?, l);
                (r.holds(), to_value(&r)?)
            }
            CheckKind::StochasticBound => {
                return Err(Error::usage("stochastic_bound needs every trial of a stochastic run"));
            }
        };
        out.push(CheckOutcome { check, passed, report });
    }
    Ok(out)
}

/// Expected-gradient bound over the trials of one stochastic run.
pub fn stochastic_check(traces: &[Trace]) -> Result<CheckOutcome> {
    let first = traces
        .first()
        .ok_or_else(|| Error::usage("need at least 2 trials, got 0"))?;
    let cfg = &first.config;
    let sigma = match cfg.noise {
        Noise::Stochastic { sigma, .. } => sigma,
        Noise::Deterministic => 0.0,
    };
    let sb = first
        .bounds
        .clone()
        .ok_or_else(|| Error::usage("stochastic_bound applies to momentum runs only"))?;
    let r = check_theorem2(traces, &sb, &cfg.hp, first.h0(), cfg.objective.infimum, sigma)?;
    Ok(CheckOutcome {
        check: CheckKind::StochasticBound,
        passed: r.holds,
        report: to_value(&r)?,
    })
}

fn trial_config(run: &RunSpec, t: usize) -> RunConfig {
    let mut cfg = run.config.clone();
    if let Noise::Stochastic { sigma, seed } = cfg.noise {
        cfg.noise = Noise::Stochastic {
            sigma,
            seed: config::trial_seed(seed, t),
        };
    }
    cfg
}

/// Run one experiment entry, write its CSV and report, and return the report.
pub fn execute_run(run: &RunSpec, out_dir: &Path) -> Result<RunReport> {
    let results: Vec<Result<Trace>> = (0..run.trials.max(1))
        .into_par_iter()
        .map(|t| run_trial(&trial_config(run, t)))
        .collect();
    let mut traces = Vec::with_capacity(results.len());
    let mut divergence = None;
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(tr) => traces.push(tr),
            Err(Error::Divergence { iteration, reason, trace }) => {
                divergence.get_or_insert(Divergence {
                    trial: t,
                    iteration,
                    reason,
                });
                traces.push(*trace);
            }
            Err(e) => return Err(e),
        }
    }
    let primary = &traces[0];
    output::write_trace_csv(&out_dir.join(format!("{}.csv", run.name)), &primary.records)?;

    let mut checks = Vec::new();
    if divergence.is_none() {
        let single: Vec<CheckKind> = run
            .checks
            .iter()
            .copied()
            .filter(|c| *c != CheckKind::StochasticBound)
            .collect();
        checks = evaluate_checks(primary, &single)?;
        if run.checks.contains(&CheckKind::StochasticBound) {
            checks.push(stochastic_check(&traces)?);
        }
    }
    let report = RunReport {
        name: run.name.clone(),
        config: run.config.clone(),
        bounds: primary.bounds.clone(),
        status: if divergence.is_some() {
            RunStatus::Diverged
        } else {
            RunStatus::Completed
        },
        passed: divergence.is_none() && checks.iter().all(|c| c.passed),
        divergence,
        trials: traces.len(),
        iterations: primary.iterations(),
        terminal_f: primary.summary.terminal_f,
        stop_reason: primary.summary.stop_reason,
        floor_overrides: primary.summary.floor_overrides,
        wall_time_secs: traces.iter().map(|t| t.summary.wall_time_secs).sum(),
        tau_samples: traces
            .iter()
            .filter_map(|t| t.summary.tau.zip(t.summary.grad_sq_at_tau))
            .collect(),
        checks,
    };
    output::write_json(&out_dir.join(format!("{}.report.json", run.name)), &report)?;
    Ok(report)
}

fn run_trial(cfg: &RunConfig) -> Result<Trace> {
    run(cfg)
}

/// Execute every run on the current thread pool and write `summary.json`.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    fs::create_dir_all(&spec.out_dir)?;
    let reports: Vec<RunReport> = spec
        .runs
        .par_iter()
        .map(|r| execute_run(r, &spec.out_dir))
        .collect::<Result<_>>()?;
    let runs: Vec<RunSummary> = reports
        .into_iter()
        .map(|r| RunSummary {
            name: r.name,
            status: r.status,
            iterations: r.iterations,
            terminal_f: r.terminal_f,
            checks: r.checks,
            passed: r.passed,
        })
        .collect();
    let outcome = ExperimentOutcome {
        out_dir: spec.out_dir.clone(),
        seed: spec.seed,
        all_passed: runs.iter().all(|r| r.passed),
        runs,
    };
    output::write_json(&spec.out_dir.join("summary.json"), &outcome)?;
    Ok(outcome)
}

fn cmd_bounds(args: BoundsArgs) -> Result<i32> {
    let mut hp = HyperParams {
        momentum: args.b,
        second_moment_rate: args.c,
        theorem_margin: args.epsilon,
        alpha_override: args.alpha,
        ..HyperParams::default()
    };
    if let Some(d) = args.delta {
        hp.clip_floor = ClipFloor::Absolute(d);
    } else if let Some(f) = args.delta_fraction {
        hp.clip_floor = ClipFloor::FractionOfBound(f);
    }
    let setting = if args.stochastic {
        Setting::Stochastic
    } else {
        Setting::Deterministic
    };
    let sb = bounds::validate(&hp, args.lipschitz, policy_alpha(args.policy, args.c), setting);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&sb)?);
    } else {
        println!("alpha = {}", sb.alpha);
        println!("a_sup = {}", sb.a_sup);
        println!("bar_a_sup = {}", sb.bar_a_sup);
        println!("delta = {}", sb.delta);
        println!("valid = {}", sb.valid);
        for c in &sb.checklist {
            println!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        }
    }
    Ok(if sb.valid { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Serialize)]
struct Figure1Summary<'a> {
    options: &'a Figure1Options,
    cells: Vec<Figure1Row<'a>>,
}

#[derive(Serialize)]
struct Figure1Row<'a> {
    p: f64,
    algorithm: Figure1Algorithm,
    file: String,
    iterations: usize,
    terminal_f: f64,
    classification: &'a crate::klrates::RateClassification,
    divergence: Option<&'a str>,
}

fn cmd_figure1(args: Figure1Args) -> Result<i32> {
    let mut opts = Figure1Options::default();
    if let Some(m) = args.max_iter {
        opts.max_iter = m;
    }
    if let Some(p) = args.p {
        opts.p_values = p;
    }
    if let Some(a) = args.algorithms {
        opts.algorithms = a;
    }
    let cells = with_pool(args.jobs, || figure1_experiment(&opts))??;
    fs::create_dir_all(&args.out_dir)?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        let file = format!("p{}_{}.csv", cell.p, cell.algorithm);
        output::write_series_csv(&args.out_dir.join(&file), cell)?;
        println!(
            "p={:<4} {:<15} {:<13} {}",
            cell.p,
            cell.algorithm.to_string(),
            cell.classification.regime.to_string(),
            cell.classification
                .fitted_q
                .map(|q| format!("q={q:.6}"))
                .or(cell.classification.fitted_slope.map(|s| format!("slope={s:.3}")))
                .unwrap_or_default()
        );
        rows.push(Figure1Row {
            p: cell.p,
            algorithm: cell.algorithm,
            file,
            iterations: cell.trace.iterations(),
            terminal_f: cell.trace.summary.terminal_f,
            classification: &cell.classification,
            divergence: cell.divergence.as_deref(),
        });
    }
    output::write_json(
        &args.out_dir.join("figure1_summary.json"),
        &Figure1Summary {
            options: &opts,
            cells: rows,
        },
    )?;
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let report: RunReport = serde_json::from_str(&fs::read_to_string(&args.report)?)?;
    let records = output::read_trace_csv(&args.trace)?;
    let checks: Vec<CheckKind> = if args.checks.is_empty() {
        report
            .checks
            .iter()
            .map(|c| c.check)
            .filter(|c| !c.needs_vectors() && *c != CheckKind::StochasticBound)
            .collect()
    } else {
        args.checks.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    if let Some(c) = checks.iter().find(|c| c.needs_vectors()) {
        return Err(Error::usage(format!(
            "{c} needs per-step vectors, which trace CSVs do not store; rerun the experiment instead"
        )));
    }
    let trace = Trace::from_records(report.config, report.bounds, records)?;
    let outcomes = evaluate_checks(&trace, &checks)?;
    println!("{}", serde_json::to_string_pretty(&outcomes)?);
    Ok(if outcomes.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
