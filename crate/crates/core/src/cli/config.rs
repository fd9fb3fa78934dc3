//! Experiment files.
//!
//! An experiment is a TOML document with optional top-level settings and one
//! `[[run]]` table per run. Syntax errors are reported with line and column;
//! semantic errors are collected for every run and reported together, each
//! prefixed with its field path (`run[2].b`).

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::Setting;
use crate::engine::{Algorithm, Noise, RunConfig};
use crate::error::{Error, Result};
use crate::objectives::parse_objective;
use crate::stepsize::{ClipMode, PolicyKind};
use crate::types::{ClipFloor, HyperParams, Vector};

pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
    trials: Option<usize>,
    verify: Option<bool>,
    #[serde(default)]
    run: Vec<RawRun>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    name: Option<String>,
    objective: Option<String>,
    algorithm: Option<String>,
    policy: Option<String>,
    clipping: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    eps_den: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    delta_fraction: Option<f64>,
    alpha: Option<f64>,
    step: Option<f64>,
    inertia: Option<f64>,
    mode: Option<String>,
    sigma: Option<f64>,
    seed: Option<u64>,
    x0: Option<Vec<f64>>,
    max_iter: Option<i64>,
    stop_tol: Option<f64>,
    trials: Option<usize>,
    checks: Option<Vec<String>>,
}

/// Verification attached to a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `H` nonincreasing.
    Monotone,
    /// Per-step descent inequality; needs per-step vectors.
    DescentLemma,
    /// Min-gradient rate bound for fully clipped runs.
    RateBound,
    /// Step-weighted gradient bound for upper-clipped runs; needs per-step vectors.
    UpperClipBound,
    /// Expected gradient at a random iterate over stochastic trials.
    StochasticBound,
    /// Min-gradient bound for gradient descent.
    GdBound,
    /// Sufficient decrease and relative-error conditions.
    AbstractConditions,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Monotone,
        CheckKind::DescentLemma,
        CheckKind::RateBound,
        CheckKind::UpperClipBound,
        CheckKind::StochasticBound,
        CheckKind::GdBound,
        CheckKind::AbstractConditions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Monotone => "monotone",
            CheckKind::DescentLemma => "descent_lemma",
            CheckKind::RateBound => "rate_bound",
            CheckKind::UpperClipBound => "upper_clip_bound",
            CheckKind::StochasticBound => "stochastic_bound",
            CheckKind::GdBound => "gd_bound",
            CheckKind::AbstractConditions => "abstract_conditions",
        }
    }

    pub fn needs_vectors(self) -> bool {
        matches!(self, CheckKind::DescentLemma | CheckKind::UpperClipBound)
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown check {s:?}")))
    }
}

/// Checks whose hypotheses `config` satisfies.
pub fn applicable_checks(config: &RunConfig) -> Vec<CheckKind> {
    let deterministic = config.setting() == Setting::Deterministic;
    match config.algorithm {
        Algorithm::Momentum {
            clipping: ClipMode::Full,
            ..
        } if deterministic => vec![
            CheckKind::Monotone,
            CheckKind::DescentLemma,
            CheckKind::RateBound,
            CheckKind::AbstractConditions,
        ],
        Algorithm::Momentum {
            clipping: ClipMode::Full,
            ..
        } => vec![CheckKind::StochasticBound],
        Algorithm::Momentum {
            clipping: ClipMode::UpperOnly,
            ..
        } if deterministic => vec![CheckKind::Monotone, CheckKind::DescentLemma, CheckKind::UpperClipBound],
        Algorithm::GradientDescent { step } if deterministic && step < 2.0 / config.objective.lipschitz => {
            vec![CheckKind::GdBound]
        }
        _ => Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSpec {
    pub name: String,
    pub config: RunConfig,
    pub checks: Vec<CheckKind>,
    /// Independent seeded repetitions (stochastic runs only).
    pub trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub runs: Vec<RunSpec>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
}

/// 1-based line and column of byte `offset` in `text`.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parse and validate an experiment document. `force_verify` attaches every
/// applicable check to runs that list none.
pub fn parse_spec(text: &str, force_verify: bool) -> Result<ExperimentSpec> {
    parse_spec_with(text, force_verify, None)
}

/// [`parse_spec`] with the document's global seed replaced by `seed`.
pub fn parse_spec_with(text: &str, force_verify: bool, seed: Option<u64>) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if raw.run.is_empty() {
        return Err(Error::usage("experiment defines no [[run]] tables"));
    }
    let verify = force_verify || raw.verify.unwrap_or(false);
    let default_trials = raw.trials.unwrap_or(DEFAULT_TRIALS);
    let seed = seed.or(raw.seed).unwrap_or(0);

    let mut problems = Vec::new();
    if raw.jobs == Some(0) {
        problems.push("jobs: must be >= 1".to_string());
    }
    let mut runs = Vec::new();
    let mut names = HashSet::new();
    for (i, r) in raw.run.iter().enumerate() {
        let mut errs = Vec::new();
        if let Some(spec) = build_run(i, r, seed, default_trials, verify, &mut errs) {
            if !names.insert(spec.name.clone()) {
                errs.push(format!("run[{i}].name: duplicate name {:?}", spec.name));
            }
            runs.push(spec);
        }
        problems.extend(errs);
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("\n")));
    }
    Ok(ExperimentSpec {
        runs,
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("out")),
        seed,
        jobs: raw.jobs,
    })
}

fn parse_field<T: FromStr<Err = Error>>(path: &str, value: Option<&str>, default: T, errs: &mut Vec<String>) -> T {
    match value.map(str::parse) {
        None => default,
        Some(Ok(v)) => v,
        Some(Err(e)) => {
            errs.push(format!("{path}: {}", strip_kind(&e)));
            default
        }
    }
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Usage(m) | Error::Domain(m) | Error::Config(m) | Error::Hypothesis(m) => m.clone(),
        other => other.to_string(),
    }
}

fn seed_for(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Seed of trial `t` for a run whose base seed is `base`.
pub fn trial_seed(base: u64, t: usize) -> u64 {
    seed_for(base, t)
}

fn build_run(
    i: usize,
    r: &RawRun,
    global_seed: u64,
    default_trials: usize,
    verify: bool,
    errs: &mut Vec<String>,
) -> Option<RunSpec> {
    let path = |f: &str| format!("run[{i}].{f}");
    let name = r.name.clone().unwrap_or_else(|| format!("run{i}"));
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        errs.push(format!("{}: {name:?} must be nonempty and use only [A-Za-z0-9._-]", path("name")));
    }

    let objective = match r.objective.as_deref() {
        None => {
            errs.push(format!("{}: required", path("objective")));
            None
        }
        Some(id) => match parse_objective(id) {
            Ok(o) => Some(o),
            Err(e) => {
                errs.push(format!("{}: {}", path("objective"), strip_kind(&e)));
                None
            }
        },
    };

    let mut hp = HyperParams::default();
    let num = |errs: &mut Vec<String>, field: &str, v: Option<f64>, ok: fn(f64) -> bool, rule: &str, slot: &mut f64| {
        if let Some(v) = v {
            if ok(v) {
                *slot = v;
            } else {
                errs.push(format!("run[{i}].{field}: {v} {rule}"));
            }
        }
    };
    num(errs, "a", r.a, |v| v > 0.0 && v.is_finite(), "must be > 0", &mut hp.base_rate);
    num(errs, "b", r.b, |v| v > 0.0 && v <= 1.0, "must lie in (0, 1]", &mut hp.momentum);
    num(errs, "c", r.c, |v| (0.0..1.0).contains(&v), "must lie in [0, 1)", &mut hp.second_moment_rate);
    num(errs, "eps_den", r.eps_den, |v| v > 0.0 && v.is_finite(), "must be > 0", &mut hp.eps_den);
    num(errs, "epsilon", r.epsilon, |v| v > 0.0 && v.is_finite(), "must be > 0", &mut hp.theorem_margin);
    let mut alpha = f64::NAN;
    num(errs, "alpha", r.alpha, |v| v > 0.0 && v <= 1.0, "must lie in (0, 1]", &mut alpha);
    if r.alpha.is_some() && alpha.is_finite() {
        hp.alpha_override = Some(alpha);
    }
    let mut delta = f64::NAN;
    num(errs, "delta", r.delta, |v| v > 0.0 && v.is_finite(), "must be > 0", &mut delta);
    let mut frac = f64::NAN;
    num(errs, "delta_fraction", r.delta_fraction, |v| v > 0.0 && v <= 1.0, "must lie in (0, 1]", &mut frac);
    match (r.delta, r.delta_fraction) {
        (Some(_), Some(_)) => errs.push(format!("{}: set delta or delta_fraction, not both", path("delta"))),
        (Some(_), None) if delta.is_finite() => hp.clip_floor = ClipFloor::Absolute(delta),
        (None, Some(_)) if frac.is_finite() => hp.clip_floor = ClipFloor::FractionOfBound(frac),
        _ => {}
    }
    let mut sigma = 0.0;
    num(errs, "sigma", r.sigma, |v| v >= 0.0 && v.is_finite(), "must be >= 0", &mut sigma);
    let mut stop_tol = 0.0;
    num(errs, "stop_tol", r.stop_tol, |v| v >= 0.0 && v.is_finite(), "must be >= 0", &mut stop_tol);

    let policy = parse_field(&path("policy"), r.policy.as_deref(), PolicyKind::RmspropAdam, errs);
    let clipping = parse_field(&path("clipping"), r.clipping.as_deref(), ClipMode::Full, errs);
    let algorithm = match r.algorithm.as_deref().unwrap_or("momentum") {
        "momentum" => Algorithm::Momentum { policy, clipping },
        kind @ ("gd" | "heavy_ball") => {
            let step = match r.step {
                Some(s) if s > 0.0 && s.is_finite() => s,
                Some(s) => {
                    errs.push(format!("{}: {s} must be > 0", path("step")));
                    1.0
                }
                None => objective.as_ref().map_or(1.0, |o| 1.0 / o.lipschitz),
            };
            if kind == "gd" {
                Algorithm::GradientDescent { step }
            } else {
                let inertia = r.inertia.unwrap_or(0.0);
                if !(0.0..1.0).contains(&inertia) {
                    errs.push(format!("{}: {inertia} must lie in [0, 1)", path("inertia")));
                }
                Algorithm::HeavyBall { step, inertia }
            }
        }
        other => {
            errs.push(format!(
                "{}: unknown algorithm {other:?} (expected momentum, gd or heavy_ball)",
                path("algorithm")
            ));
            return None;
        }
    };

    let run_seed = r.seed.unwrap_or_else(|| seed_for(global_seed, i));
    let noise = match r.mode.as_deref().unwrap_or("deterministic") {
        "deterministic" => {
            if r.sigma.is_some() {
                errs.push(format!("{}: only used with mode = \"stochastic\"", path("sigma")));
            }
            Noise::Deterministic
        }
        "stochastic" => Noise::Stochastic { sigma, seed: run_seed },
        other => {
            errs.push(format!(
                "{}: unknown mode {other:?} (expected deterministic or stochastic)",
                path("mode")
            ));
            Noise::Deterministic
        }
    };
    let max_iter = match r.max_iter {
        None => DEFAULT_MAX_ITER,
        Some(m) if m >= 1 => m as usize,
        Some(m) => {
            errs.push(format!("{}: {m} must be >= 1", path("max_iter")));
            1
        }
    };
    let trials = r.trials.unwrap_or(default_trials);
    if matches!(noise, Noise::Stochastic { .. }) && trials < 1 {
        errs.push(format!("{}: must be >= 1", path("trials")));
    }

    let objective = objective?;
    let x0 = match &r.x0 {
        None => objective.start.clone(),
        Some(v) if v.len() != objective.dim => {
            errs.push(format!(
                "{}: has {} components, objective {} needs {}",
                path("x0"),
                v.len(),
                objective.id,
                objective.dim
            ));
            return None;
        }
        Some(v) => match Vector::new(v.clone()) {
            Ok(x) => x,
            Err(e) => {
                errs.push(format!("{}: {}", path("x0"), strip_kind(&e)));
                return None;
            }
        },
    };
    let config = RunConfig::new(objective, algorithm)
        .with_hp(hp)
        .with_noise(noise)
        .with_x0(x0)
        .with_max_iter(max_iter)
        .with_stop_tol(stop_tol);

    if clipping != ClipMode::Off && matches!(config.algorithm, Algorithm::Momentum { .. }) {
        if let Some(sb) = config.safe_bounds() {
            for c in sb.checklist.iter().filter(|c| !c.passed) {
                let field = if c.name.contains("α < b") {
                    "b"
                } else if c.name.starts_with("nonempty clip interval") {
                    "delta"
                } else if c.name.ends_with("≥ 0") {
                    "epsilon"
                } else if c.name == "hyperparameter ranges" {
                    continue;
                } else {
                    "objective"
                };
                errs.push(format!("{}: {} fails: {}", path(field), c.name, c.detail));
            }
        }
    }

    let applicable = applicable_checks(&config);
    let checks = match &r.checks {
        Some(list) => {
            let mut out = Vec::new();
            for s in list {
                match s.parse::<CheckKind>() {
                    Ok(c) if applicable.contains(&c) => out.push(c),
                    Ok(c) => errs.push(format!("{}: {c} does not apply to this run", path("checks"))),
                    Err(e) => errs.push(format!("{}: {}", path("checks"), strip_kind(&e))),
                }
            }
            out
        }
        None if verify => applicable,
        None => Vec::new(),
    };
    let keep_vectors = checks.iter().any(|c| c.needs_vectors());
    Some(RunSpec {
        name,
        config: config.with_vectors(keep_vectors),
        checks,
        trials: if matches!(noise, Noise::Stochastic { .. }) { trials } else { 1 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_gd_spec_gets_defaults() {
        let spec = parse_spec("[[run]]\nobjective = \"quadratic:d=1,lam=1\"\nalgorithm = \"gd\"\n", false).unwrap();
        let run = &spec.runs[0];
        assert_eq!(run.name, "run0");
        assert_eq!(run.config.algorithm, Algorithm::GradientDescent { step: 1.0 });
        assert_eq!(run.config.max_iter, DEFAULT_MAX_ITER);
        assert_eq!(run.config.hp, HyperParams::default());
        assert!(run.checks.is_empty());
        assert_eq!(spec.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_spec("seed = 1\n[[run]]\nobjective = \n", false).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let err = parse_spec("[[run]]\nobjective = \"monomial:p=2\"\nbogus = 1\n", false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 1, .. }), "{err:?}");
    }

    #[test]
    fn empty_spec_is_usage_error() {
        assert!(matches!(parse_spec("", false), Err(Error::Usage(_))));
    }

    #[test]
    fn hypothesis_violation_is_reported_with_path() {
        let text = "[[run]]\nobjective = \"quadratic:d=2,lam=1\"\nb = 0.5\nc = 0.96\n";
        let msg = parse_spec(text, false).unwrap_err().to_string();
        assert!(msg.contains("run[0].b") && msg.contains("1 − α < b ≤ 1"), "{msg}");
    }

    #[test]
    fn floor_above_bound_is_reported() {
        let text = "[[run]]\nobjective = \"quadratic:d=2,lam=1\"\ndelta = 5.0\n";
        let msg = parse_spec(text, false).unwrap_err().to_string();
        assert!(msg.contains("run[0].delta") && msg.contains("nonempty clip interval"), "{msg}");
    }

    #[test]
    fn all_problems_are_listed() {
        let text = "[[run]]\nobjective = \"cube\"\na = -1\n[[run]]\nobjective = \"monomial:p=2\"\nmax_iter = 0\nmode = \"noisy\"\n";
        let msg = parse_spec(text, false).unwrap_err().to_string();
        for needle in ["run[0].objective", "run[0].a", "run[1].max_iter", "run[1].mode"] {
            assert!(msg.contains(needle), "missing {needle} in {msg}");
        }
    }

    #[test]
    fn verify_attaches_applicable_checks() {
        let text = "[[run]]\nobjective = \"quadratic:d=2,lam=1\"\n";
        let spec = parse_spec(text, true).unwrap();
        assert!(spec.runs[0].checks.contains(&CheckKind::RateBound));
        assert!(spec.runs[0].config.keep_vectors);
        let bad = "[[run]]\nobjective = \"quadratic:d=2,lam=1\"\nalgorithm = \"gd\"\nchecks = [\"rate_bound\"]\n";
        assert!(parse_spec(bad, false).unwrap_err().to_string().contains("run[0].checks"));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
        assert_eq!(line_col("ab", 0), (1, 1));
    }
}
