//! Optimization loops.
//!
//! The momentum recursion runs in a fixed order each iteration: gradient at
//! the old iterate, momentum update, raw step from the policy (which folds
//! the gradient into its accumulator), clipping, then the position update
//! with the new momentum and the new step.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, SafeBounds, Setting};
use crate::diagnostics::lyapunov_h;
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::stepsize::{clip_step, clip_upper, ClipMode, PolicyKind, StepPolicy};
use crate::types::{HyperParams, IterateState, TraceRecord, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// `p ← p + b(g − p)`, `x ← x − a ⊙ p` with adaptive steps `a`.
    Momentum { policy: PolicyKind, clipping: ClipMode },
    /// `x ← x − γ g`
    GradientDescent { step: f64 },
    /// `x ← x − α g + β(x − x_prev)` with constant scalars.
    HeavyBall { step: f64, inertia: f64 },
}

impl Algorithm {
    pub fn clipped_adam() -> Self {
        Algorithm::Momentum {
            policy: PolicyKind::RmspropAdam,
            clipping: ClipMode::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Noise {
    Deterministic,
    /// Gaussian gradient noise with `E‖η‖² = σ²`.
    Stochastic { sigma: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub objective: Objective,
    pub hp: HyperParams,
    pub algorithm: Algorithm,
    pub noise: Noise,
    pub x0: Vector,
    pub max_iter: usize,
    /// Stop once `‖∇f(x_n)‖ ≤ stop_tol`. Zero disables; ignored in stochastic mode.
    pub stop_tol: f64,
    /// Keep per-iteration vectors, needed by the descent-lemma and
    /// no-lower-bound checks.
    pub keep_vectors: bool,
}

impl RunConfig {
    pub fn new(objective: Objective, algorithm: Algorithm) -> Self {
        let x0 = objective.start.clone();
        RunConfig {
            objective,
            hp: HyperParams::default(),
            algorithm,
            noise: Noise::Deterministic,
            x0,
            max_iter: 1000,
            stop_tol: 0.0,
            keep_vectors: true,
        }
    }

    pub fn with_hp(mut self, hp: HyperParams) -> Self {
        self.hp = hp;
        self
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_x0(mut self, x0: Vector) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_stop_tol(mut self, tol: f64) -> Self {
        self.stop_tol = tol;
        self
    }

    pub fn with_vectors(mut self, keep: bool) -> Self {
        self.keep_vectors = keep;
        self
    }

    pub fn setting(&self) -> Setting {
        match self.noise {
            Noise::Deterministic => Setting::Deterministic,
            Noise::Stochastic { .. } => Setting::Stochastic,
        }
    }

    /// Bounds the run clips against (momentum runs only).
    pub fn safe_bounds(&self) -> Option<SafeBounds> {
        match self.algorithm {
            Algorithm::Momentum { policy, .. } => {
                let alpha = crate::stepsize::policy_alpha(policy, self.hp.second_moment_rate);
                Some(bounds::validate(&self.hp, self.objective.lipschitz, alpha, self.setting()))
            }
            _ => None,
        }
    }

    /// Every contract problem, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_iter < 1 {
            out.push("max_iter must be >= 1".to_string());
        }
        if self.x0.len() != self.objective.dim {
            out.push(format!(
                "x0 has dimension {}, objective {} has {}",
                self.x0.len(),
                self.objective.id,
                self.objective.dim
            ));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            out.push(format!("stop_tol must be >= 0, got {}", self.stop_tol));
        }
        if let Noise::Stochastic { sigma, .. } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                out.push(format!("σ must be >= 0, got {sigma}"));
            }
        }
        match self.algorithm {
            Algorithm::Momentum { clipping, .. } => {
                out.extend(self.hp.range_problems());
                if clipping != ClipMode::Off {
                    if let Some(sb) = self.safe_bounds() {
                        if !sb.valid {
                            out.push(format!("clipping requested but bounds are invalid: {}", sb.diagnostics));
                        }
                    }
                }
            }
            Algorithm::GradientDescent { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    out.push(format!("gradient-descent step must be > 0, got {step}"));
                }
            }
            Algorithm::HeavyBall { step, inertia } => {
                if !(step > 0.0 && step.is_finite()) {
                    out.push(format!("heavy-ball step must be > 0, got {step}"));
                }
                if !(0.0..1.0).contains(&inertia) {
                    out.push(format!("heavy-ball inertia must lie in [0, 1), got {inertia}"));
                }
            }
        }
        out.dedup();
        out
    }
}

/// Vectors at iterate `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub x: Vector,
    pub p: Vector,
    pub a: Vector,
    /// Gradient fed to the update from `x_n` (the noisy sample in stochastic mode).
    pub g: Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    Tolerance,
    /// The iterate reached or crossed the minimizer of a finite-reach objective.
    FiniteReach,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub terminal_f: f64,
    /// Running `min_{k ≤ n} ‖∇f(x_k)‖²`.
    pub min_grad_sq: Vec<f64>,
    pub stop_reason: StopReason,
    /// Coordinates where the clip floor overrode the growth cap.
    pub floor_overrides: usize,
    pub wall_time_secs: f64,
    /// Uniform index in `{0, …, n−1}` (stochastic runs).
    pub tau: Option<usize>,
    /// Exact `‖∇F(x_τ)‖²`.
    pub grad_sq_at_tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    #[serde(skip)]
    pub snapshots: Option<Vec<Snapshot>>,
    pub config: RunConfig,
    pub bounds: Option<SafeBounds>,
    pub summary: TraceSummary,
}

impl Trace {
    pub fn h0(&self) -> f64 {
        self.records[0].lyapunov_h
    }

    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    /// Rebuild a trace from scalar records alone, e.g. read back from CSV.
    pub fn from_records(config: RunConfig, bounds: Option<SafeBounds>, records: Vec<TraceRecord>) -> Result<Trace> {
        if records.is_empty() {
            return Err(Error::usage("trace has no records"));
        }
        let mut rec = Recorder::new(false, 0);
        rec.records = records;
        Ok(rec.finish(&config, bounds, StopReason::MaxIter, 0, None))
    }
}

/// One step of the momentum recursion. Returns the new state and the number
/// of coordinates where the clip floor overrode the growth cap.
pub fn step_algorithm1(
    state: &IterateState,
    g: &Vector,
    momentum: f64,
    policy: &mut StepPolicy,
    bounds: &SafeBounds,
    clipping: ClipMode,
) -> Result<(IterateState, usize)> {
    let b = momentum;
    // (1 − b)p + bg rather than p + b(g − p): exact at b = 1.
    let p = state.p.zip_map(g, |p, g| (1.0 - b) * p + b * g)?;
    let raw = policy.raw_step(g)?;
    let (a, overrides) = match clipping {
        ClipMode::Off => (raw, 0),
        ClipMode::Full => {
            let c = clip_step(&raw, &state.a_eff, bounds, bounds.delta)?;
            (c.step, c.floor_overrides)
        }
        ClipMode::UpperOnly => (clip_upper(&raw, &state.a_eff, bounds)?, 0),
    };
    let x = state.x.zip_map(&a.zip_map(&p, |a, p| a * p)?, |x, s| x - s)?;
    Ok((
        IterateState {
            x,
            p,
            v: policy.state().clone(),
            a_eff: a,
            n: state.n + 1,
        },
        overrides,
    ))
}

pub fn step_gradient_descent(x: &Vector, gamma: f64, g: &Vector) -> Result<Vector> {
    x.zip_map(g, |x, g| x - gamma * g)
}

/// `x − α g + β(x − x_prev)`
pub fn step_heavy_ball(x: &Vector, x_prev: &Vector, alpha: f64, beta: f64, g: &Vector) -> Result<Vector> {
    let d = x.len();
    step_heavy_ball_coordinatewise(x, x_prev, &Vector::filled(d, alpha), &Vector::filled(d, beta), g)
}

/// Heavy-ball update with per-coordinate parameters.
pub fn step_heavy_ball_coordinatewise(
    x: &Vector,
    x_prev: &Vector,
    alpha: &Vector,
    beta: &Vector,
    g: &Vector,
) -> Result<Vector> {
    let descent = alpha.zip_map(g, |a, g| a * g)?;
    let inertia = beta.zip_map(&x.sub(x_prev)?, |b, dx| b * dx)?;
    x.sub(&descent)?.add(&inertia)
}

/// `∇f(x) + η` with `η ~ N(0, σ²/d · I)`, so `E‖η‖² = σ²`.
pub fn stochastic_gradient<R: Rng + ?Sized>(f: &Objective, x: &Vector, sigma: f64, rng: &mut R) -> Result<Vector> {
    let g = f.grad(x)?;
    add_noise(g, sigma, rng)
}

fn add_noise<R: Rng + ?Sized>(g: Vector, sigma: f64, rng: &mut R) -> Result<Vector> {
    if sigma == 0.0 {
        return Ok(g);
    }
    let sd = sigma / (g.len() as f64).sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::usage(e.to_string()))?;
    g.map(|gi| gi + normal.sample(rng))
}

struct Recorder {
    records: Vec<TraceRecord>,
    snapshots: Option<Vec<Snapshot>>,
    started: Instant,
}

impl Recorder {
    fn new(keep_vectors: bool, capacity: usize) -> Self {
        Recorder {
            records: Vec::with_capacity(capacity),
            snapshots: keep_vectors.then(Vec::new),
            started: Instant::now(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, n: usize, x: &Vector, p: &Vector, a: &Vector, f: f64, g_true: &Vector, g_used: &Vector, b: f64, dx: f64) -> Result<()> {
        let inner = p.weighted_sq(a)?;
        let record = TraceRecord {
            n,
            f_val: f,
            grad_sq_norm: g_true.norm_sq(),
            lyapunov_h: lyapunov_h(f, a, p, b)?,
            step_min: a.min(),
            step_max: a.max(),
            p_sq_norm: p.norm_sq(),
            dx_norm: dx,
            inner_a_p_sq: inner,
        };
        if !(record.grad_sq_norm.is_finite() && record.lyapunov_h.is_finite() && record.inner_a_p_sq.is_finite()) {
            return Err(Error::domain(format!("non-finite trace entry at iteration {n}")));
        }
        self.records.push(record);
        if let Some(s) = &mut self.snapshots {
            s.push(Snapshot {
                x: x.clone(),
                p: p.clone(),
                a: a.clone(),
                g: g_used.clone(),
            });
        }
        Ok(())
    }

    fn finish(
        self,
        config: &RunConfig,
        bounds: Option<SafeBounds>,
        stop_reason: StopReason,
        floor_overrides: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Trace {
        let mut running = f64::INFINITY;
        let min_grad_sq = self
            .records
            .iter()
            .map(|r| {
                running = running.min(r.grad_sq_norm);
                running
            })
            .collect();
        let iterations = self.records.len().saturating_sub(1);
        let (tau, grad_sq_at_tau) = match rng {
            Some(rng) if iterations >= 1 => {
                let tau = rng.random_range(0..iterations);
                (Some(tau), Some(self.records[tau].grad_sq_norm))
            }
            _ => (None, None),
        };
        Trace {
            summary: TraceSummary {
                iterations,
                terminal_f: self.records.last().map_or(f64::NAN, |r| r.f_val),
                min_grad_sq,
                stop_reason,
                floor_overrides,
                wall_time_secs: self.started.elapsed().as_secs_f64(),
                tau,
                grad_sq_at_tau,
            },
            records: self.records,
            snapshots: self.snapshots,
            config: config.clone(),
            bounds,
        }
    }
}

/// Run `config` to completion.
///
/// Stops at `max_iter`, when the gradient norm falls to `stop_tol`, or when
/// a finite-reach objective's minimizer is reached. A non-finite value
/// anywhere aborts with [`Error::Divergence`] carrying the partial trace.
pub fn run(config: &RunConfig) -> Result<Trace> {
    let problems = config.problems();
    if !problems.is_empty() {
        let clip_problem = problems.iter().all(|p| p.starts_with("clipping requested"));
        let msg = problems.join("; ");
        return Err(if clip_problem { Error::Config(msg) } else { Error::Usage(msg) });
    }
    let mut rng = match config.noise {
        Noise::Stochastic { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Noise::Deterministic => None,
    };
    let sigma = match config.noise {
        Noise::Stochastic { sigma, .. } => sigma,
        Noise::Deterministic => 0.0,
    };
    let bounds = config.safe_bounds();
    let mut rec = Recorder::new(config.keep_vectors, config.max_iter.min(1 << 20) + 1);
    let mut floor_overrides = 0;

    let outcome = drive(config, bounds.as_ref(), &mut rec, &mut rng, sigma, &mut floor_overrides);
    match outcome {
        Ok(stop) => Ok(rec.finish(config, bounds, stop, floor_overrides, rng.as_mut())),
        Err(Error::Domain(reason)) => {
            let iteration = rec.records.len();
            let trace = rec.finish(config, bounds, StopReason::MaxIter, floor_overrides, None);
            Err(Error::Divergence {
                iteration,
                reason,
                trace: Box::new(trace),
            })
        }
        Err(e) => Err(e),
    }
}

fn drive(
    config: &RunConfig,
    bounds: Option<&SafeBounds>,
    rec: &mut Recorder,
    rng: &mut Option<ChaCha8Rng>,
    sigma: f64,
    floor_overrides: &mut usize,
) -> Result<StopReason> {
    let obj = &config.objective;
    let d = obj.dim;
    let check_tol = config.stop_tol > 0.0 && rng.is_none();
    let mut sample = |g: &Vector| -> Result<Vector> {
        match rng.as_mut() {
            Some(r) => add_noise(g.clone(), sigma, r),
            None => Ok(g.clone()),
        }
    };

    let x0 = config.x0.clone();
    let mut f = obj.value(&x0)?;
    let mut g_true = obj.grad(&x0)?;
    let mut g_used = sample(&g_true)?;

    match config.algorithm {
        Algorithm::Momentum { policy, clipping } => {
            let b = config.hp.momentum;
            let bounds = bounds.expect("momentum runs carry bounds");
            let mut pol = StepPolicy::new(policy, &config.hp, d);
            let a0 = match clipping {
                ClipMode::Off => pol.initial_step(),
                _ => Vector::filled(d, bounds.upper()),
            };
            let mut state = IterateState::initial(x0, a0);
            rec.push(0, &state.x, &state.p, &state.a_eff, f, &g_true, &g_used, b, 0.0)?;
            for _ in 0..config.max_iter {
                if check_tol && g_true.norm() <= config.stop_tol {
                    return Ok(StopReason::Tolerance);
                }
                let (next, overrides) = step_algorithm1(&state, &g_used, b, &mut pol, bounds, clipping)?;
                *floor_overrides += overrides;
                f = obj.value(&next.x)?;
                g_true = obj.grad(&next.x)?;
                g_used = sample(&g_true)?;
                let dx = next.x.sub(&state.x)?.norm();
                rec.push(next.n, &next.x, &next.p, &next.a_eff, f, &g_true, &g_used, b, dx)?;
                let reached = obj.reached_minimizer(&state.x, &next.x);
                state = next;
                if reached {
                    return Ok(StopReason::FiniteReach);
                }
            }
        }
        Algorithm::GradientDescent { step } => {
            let zeros = Vector::zeros(d);
            let steps = Vector::filled(d, step);
            let mut x = x0;
            rec.push(0, &x, &zeros, &steps, f, &g_true, &g_used, 1.0, 0.0)?;
            for n in 1..=config.max_iter {
                if check_tol && g_true.norm() <= config.stop_tol {
                    return Ok(StopReason::Tolerance);
                }
                let next = step_gradient_descent(&x, step, &g_used)?;
                f = obj.value(&next)?;
                g_true = obj.grad(&next)?;
                g_used = sample(&g_true)?;
                let dx = next.sub(&x)?.norm();
                rec.push(n, &next, &zeros, &steps, f, &g_true, &g_used, 1.0, dx)?;
                let reached = obj.reached_minimizer(&x, &next);
                x = next;
                if reached {
                    return Ok(StopReason::FiniteReach);
                }
            }
        }
        Algorithm::HeavyBall { step, inertia } => {
            let zeros = Vector::zeros(d);
            let steps = Vector::filled(d, step);
            let mut x_prev = x0.clone();
            let mut x = x0;
            rec.push(0, &x, &zeros, &steps, f, &g_true, &g_used, 1.0, 0.0)?;
            for n in 1..=config.max_iter {
                if check_tol && g_true.norm() <= config.stop_tol {
                    return Ok(StopReason::Tolerance);
                }
                let next = step_heavy_ball(&x, &x_prev, step, inertia, &g_used)?;
                f = obj.value(&next)?;
                g_true = obj.grad(&next)?;
                g_used = sample(&g_true)?;
                let dx = next.sub(&x)?.norm();
                rec.push(n, &next, &zeros, &steps, f, &g_true, &g_used, 1.0, dx)?;
                let reached = obj.reached_minimizer(&x, &next);
                x_prev = std::mem::replace(&mut x, next);
                if reached {
                    return Ok(StopReason::FiniteReach);
                }
            }
        }
    }
    Ok(StopReason::MaxIter)
}
