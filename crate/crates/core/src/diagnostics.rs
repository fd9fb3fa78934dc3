//! Numerical checks of the convergence guarantees along recorded traces.
//!
//! Every check compares both sides of an inequality at each iteration and
//! reports the worst margin. Comparisons use a relative tolerance of
//! `1e-10 · max(1, |H_n|)` unless the bound is documented as exact.

use serde::Serialize;

use crate::bounds::SafeBounds;
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::types::{HyperParams, Vector};

pub const REL_TOL: f64 = 1e-10;

fn tol(scale: f64) -> f64 {
    REL_TOL * scale.abs().max(1.0)
}

/// `H = f + ⟨a, p²⟩ / (2b)`
pub fn lyapunov_h(f_val: f64, a: &Vector, p: &Vector, b: f64) -> Result<f64> {
    Ok(f_val + p.weighted_sq(a)? / (2.0 * b))
}

/// Gradient of `H` in the variables `z = (x, y)` with `y = √a ⊙ p`:
/// `∇H(z) = (∇f(x), y / b)`.
pub fn lyapunov_grad(grad_f: &Vector, a: &Vector, p: &Vector, b: f64) -> Result<(Vector, Vector)> {
    let y = a.zip_map(p, |a, p| a.sqrt() * p)?;
    Ok((grad_f.clone(), y.scale(1.0 / b)?))
}

/// `‖∇H(z)‖² = ‖∇f‖² + ⟨a, p²⟩ / b²`, from scalar trace columns.
pub fn lyapunov_grad_sq(grad_sq: f64, inner_a_p_sq: f64, b: f64) -> f64 {
    grad_sq + inner_a_p_sq / (b * b)
}

/// The `u` that zeroes the gradient-mismatch coefficient.
pub fn lemma_u(b: f64, alpha: f64) -> Result<f64> {
    let gap = b - (1.0 - alpha);
    if gap.is_nan() || gap <= 0.0 {
        return Err(Error::usage(format!("need b > 1 − α, got b = {b}, α = {alpha}")));
    }
    Ok(alpha * b / gap)
}

/// Coefficients `(A, B)` of the per-step descent inequality at step size `a`
/// and free parameter `u > 0`:
///
/// * `A = 1 − aL/2 − |b − (1−α)| / (2u) − (1−α)/(2b)`
/// * `B = 1 − |b − (1−α)| u / b − (1−α)`
pub fn lemma_coefficients(a: f64, l: f64, b: f64, alpha: f64, u: f64) -> (f64, f64) {
    let gap = (b - (1.0 - alpha)).abs();
    let a_coef = 1.0 - a * l / 2.0 - gap / (2.0 * u) - (1.0 - alpha) / (2.0 * b);
    let b_coef = 1.0 - gap * u / b - (1.0 - alpha);
    (a_coef, b_coef)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub steps: usize,
    pub violations: usize,
    /// Largest `H_{n+1} − H_n` seen.
    pub worst_increase: f64,
    pub first_violation: Option<usize>,
}

impl MonotoneReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// `H_{n+1} ≤ H_n` within tolerance at every step.
pub fn check_lyapunov_monotone(trace: &Trace) -> MonotoneReport {
    let mut report = MonotoneReport {
        steps: trace.records.len().saturating_sub(1),
        violations: 0,
        worst_increase: f64::NEG_INFINITY,
        first_violation: None,
    };
    for w in trace.records.windows(2) {
        let dh = w[1].lyapunov_h - w[0].lyapunov_h;
        report.worst_increase = report.worst_increase.max(dh);
        if dh > tol(w[0].lyapunov_h) {
            report.violations += 1;
            report.first_violation.get_or_insert(w[0].n);
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentStep {
    pub n: usize,
    pub delta_h: f64,
    pub rhs_bound: f64,
    /// Smallest coordinate of `A_{n+1}`.
    pub a_coef_min: f64,
    pub b_coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    pub u: f64,
    #[serde(skip_serializing)]
    pub steps: Vec<DescentStep>,
    /// Steps where `ΔH` exceeds the lemma's right-hand side.
    pub lemma_violations: usize,
    /// Steps where `H` increased.
    pub ascent_violations: usize,
    /// Steps where `ΔH > −ε⟨a_{n+1}, p_{n+1}²⟩`.
    pub quantified_violations: usize,
    pub violated: bool,
    /// `min_n (rhs_bound − ΔH)`; negative means the lemma failed somewhere.
    pub worst_margin: f64,
}

/// Evaluate the per-step descent inequality
/// `ΔH ≤ −⟨a_{n+1} p_{n+1}², A_{n+1}⟩ − (b/2)⟨a_{n+1}(∇f(x_n) − p_n)², B⟩`
/// with `u = αb / (b − (1−α))`, plus the plain descent `ΔH ≤ 0` and the
/// quantified decrease `ΔH ≤ −ε⟨a_{n+1}, p_{n+1}²⟩`.
///
/// A trace is reported as violated when any of these fail. The lemma itself
/// holds for any step size, so a badly clipped run shows up through the
/// ascent and quantified-decrease counts.
pub fn check_descent_lemma(trace: &Trace, l: f64, b: f64, alpha: f64, eps: f64) -> Result<DescentReport> {
    let snaps = trace
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::usage("descent lemma needs per-step vectors; rerun with vectors kept"))?;
    let u = lemma_u(b, alpha)?;
    let mut report = DescentReport {
        u,
        steps: Vec::with_capacity(snaps.len()),
        lemma_violations: 0,
        ascent_violations: 0,
        quantified_violations: 0,
        violated: false,
        worst_margin: f64::INFINITY,
    };
    for (n, w) in snaps.windows(2).enumerate() {
        let (cur, next) = (&w[0], &w[1]);
        let h = trace.records[n].lyapunov_h;
        let dh = trace.records[n + 1].lyapunov_h - h;
        let mut a_min = f64::INFINITY;
        let mut b_coef = 0.0;
        let mut first = 0.0;
        let mut second = 0.0;
        let mut energy = 0.0;
        for i in 0..next.a.len() {
            let a = next.a[i];
            let (ac, bc) = lemma_coefficients(a, l, b, alpha, u);
            a_min = a_min.min(ac);
            b_coef = bc;
            first += a * next.p[i] * next.p[i] * ac;
            let mismatch = cur.g[i] - cur.p[i];
            second += a * mismatch * mismatch * bc;
            energy += a * next.p[i] * next.p[i];
        }
        let rhs = -first - b / 2.0 * second;
        let t = tol(h);
        if dh > rhs + t {
            report.lemma_violations += 1;
        }
        if dh > t {
            report.ascent_violations += 1;
        }
        if dh > -eps * energy + t {
            report.quantified_violations += 1;
        }
        report.worst_margin = report.worst_margin.min(rhs - dh);
        report.steps.push(DescentStep {
            n,
            delta_h: dh,
            rhs_bound: rhs,
            a_coef_min: a_min,
            b_coef,
        });
    }
    report.violated = report.lemma_violations + report.ascent_violations + report.quantified_violations > 0;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub n: usize,
    pub min_grad_sq: f64,
    pub theorem_bound: f64,
    pub holds: bool,
}

/// Per-`n` rows plus an aggregate verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    #[serde(skip_serializing)]
    pub rows: Vec<RateReport>,
    pub all_hold: bool,
    pub violations: usize,
    /// `max_n lhs / bound`.
    pub worst_ratio: f64,
}

impl BoundReport {
    fn from_rows(rows: Vec<RateReport>) -> Self {
        let violations = rows.iter().filter(|r| !r.holds).count();
        let worst_ratio = rows
            .iter()
            .map(|r| r.min_grad_sq / r.theorem_bound)
            .fold(0.0, f64::max);
        BoundReport {
            all_hold: violations == 0,
            violations,
            worst_ratio,
            rows,
        }
    }
}

/// `4/(n b²) · ((H₀ − inf f)/(δε) + ‖p₀‖²)`
pub fn theorem1_bound(n: usize, b: f64, delta: f64, eps: f64, h0: f64, inf_f: f64, p0_sq: f64) -> f64 {
    4.0 / (n as f64 * b * b) * ((h0 - inf_f) / (delta * eps) + p0_sq)
}

/// Deterministic part plus the variance floor `4 ā_sup σ² / (δ ε b²)`.
#[allow(clippy::too_many_arguments)]
pub fn theorem2_bound(
    n: usize,
    b: f64,
    delta: f64,
    eps: f64,
    h0: f64,
    inf_f: f64,
    p0_sq: f64,
    bar_a_sup: f64,
    sigma: f64,
) -> f64 {
    theorem1_bound(n, b, delta, eps, h0, inf_f, p0_sq) + 4.0 * bar_a_sup * sigma * sigma / (delta * eps * b * b)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub rate: BoundReport,
    /// `Σ_{k<n} ‖p_{k+1}‖² ≤ (H₀ − inf f)/(δε)` at every `n`.
    pub sum_check_holds: bool,
    pub sum_total: f64,
    pub sum_bound: f64,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.rate.all_hold && self.sum_check_holds
    }
}

/// The min-gradient rate bound at every `n ≥ 1`, compared exactly.
pub fn check_theorem1(trace: &Trace, bounds: &SafeBounds, hp: &HyperParams, h0: f64, inf_f: f64) -> Theorem1Report {
    let b = hp.momentum;
    let eps = hp.theorem_margin;
    let delta = bounds.delta;
    let p0_sq = trace.records[0].p_sq_norm;
    let mins = &trace.summary.min_grad_sq;
    let rows = (1..trace.records.len())
        .map(|n| {
            let lhs = mins[n - 1];
            let bound = theorem1_bound(n, b, delta, eps, h0, inf_f, p0_sq);
            RateReport {
                n,
                min_grad_sq: lhs,
                theorem_bound: bound,
                holds: lhs <= bound,
            }
        })
        .collect();
    let sum_bound = (h0 - inf_f) / (delta * eps);
    let mut sum_total = 0.0;
    let mut sum_check_holds = true;
    for r in &trace.records[1..] {
        sum_total += r.p_sq_norm;
        sum_check_holds &= sum_total <= sum_bound;
    }
    Theorem1Report {
        rate: BoundReport::from_rows(rows),
        sum_check_holds,
        sum_total,
        sum_bound,
    }
}

/// `(1/n) Σ_{k<n} ⟨a_{k+1}, ∇f(x_k)²⟩ ≤ 2(1+α)/(n b² α) · ((H₀ − inf f)/ε + ⟨a₀, p₀²⟩)`
/// for runs clipped only from above.
pub fn check_prop_no_lower_bound(
    trace: &Trace,
    hp: &HyperParams,
    bounds: &SafeBounds,
    h0: f64,
    inf_f: f64,
) -> Result<BoundReport> {
    let snaps = trace
        .snapshots
        .as_ref()
        .ok_or_else(|| Error::usage("step-weighted gradient check needs per-step vectors"))?;
    let b = hp.momentum;
    let alpha = bounds.alpha;
    let inner0 = trace.records[0].inner_a_p_sq;
    let mut acc = 0.0;
    let mut rows = Vec::with_capacity(snaps.len());
    for (k, w) in snaps.windows(2).enumerate() {
        acc += w[0].g.weighted_sq(&w[1].a)?;
        let n = k + 1;
        let lhs = acc / n as f64;
        let bound = 2.0 * (1.0 + alpha) / (n as f64 * b * b * alpha) * ((h0 - inf_f) / hp.theorem_margin + inner0);
        rows.push(RateReport {
            n,
            min_grad_sq: lhs,
            theorem_bound: bound,
            holds: lhs <= bound,
        });
    }
    Ok(BoundReport::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub trials: usize,
    pub n: usize,
    /// Mean of `‖∇F(x_τ)‖²` over trials.
    pub mean: f64,
    pub std_error: f64,
    pub deterministic_part: f64,
    pub variance_floor: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Monte-Carlo check of the expected-gradient bound at a uniformly drawn
/// iterate. Uses the exact gradient at `x_τ` recorded by each run.
pub fn check_theorem2(
    traces: &[Trace],
    bounds: &SafeBounds,
    hp: &HyperParams,
    h0: f64,
    inf_f: f64,
    sigma: f64,
) -> Result<Theorem2Report> {
    if traces.len() < 2 {
        return Err(Error::usage(format!("need at least 2 trials, got {}", traces.len())));
    }
    let n = traces[0].iterations();
    let mut samples = Vec::with_capacity(traces.len());
    for t in traces {
        if t.iterations() != n {
            return Err(Error::usage("trials have different lengths"));
        }
        samples.push(
            t.summary
                .grad_sq_at_tau
                .ok_or_else(|| Error::usage("trial has no sampled iterate; was it stochastic?"))?,
        );
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let b = hp.momentum;
    let eps = hp.theorem_margin;
    let p0_sq = traces[0].records[0].p_sq_norm;
    let deterministic_part = theorem1_bound(n, b, bounds.delta, eps, h0, inf_f, p0_sq);
    let bound = theorem2_bound(n, b, bounds.delta, eps, h0, inf_f, p0_sq, bounds.bar_a_sup, sigma);
    Ok(Theorem2Report {
        trials: samples.len(),
        n,
        mean,
        std_error: (var / m).sqrt(),
        deterministic_part,
        variance_floor: bound - deterministic_part,
        bound,
        holds: mean <= bound,
    })
}

/// `min_{k<n} ‖∇f(x_k)‖² ≤ (f(x₀) − inf f) / (n γ (1 − γL/2))`
pub fn check_gd_bound(trace: &Trace, gamma: f64, l: f64, inf_f: f64) -> Result<BoundReport> {
    if !(gamma > 0.0 && gamma < 2.0 / l) {
        return Err(Error::usage(format!("need 0 < γ < 2/L = {}, got {gamma}", 2.0 / l)));
    }
    let gap0 = trace.records[0].f_val - inf_f;
    let denom = gamma * (1.0 - gamma * l / 2.0);
    let mins = &trace.summary.min_grad_sq;
    let rows = (1..trace.records.len())
        .map(|n| {
            let bound = gap0 / (n as f64 * denom);
            RateReport {
                n,
                min_grad_sq: mins[n - 1],
                theorem_bound: bound,
                holds: mins[n - 1] <= bound,
            }
        })
        .collect();
    Ok(BoundReport::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbstractReport {
    pub rho1: f64,
    pub rho2: f64,
    pub decrease_violations: usize,
    pub gradient_violations: usize,
    /// `min_k (−ρ₁‖Δx_k‖² − ΔH_k)`
    pub worst_decrease_margin: f64,
    /// `min_k (ρ₂(‖Δx_{k+1}‖ + ‖Δx_k‖) − ‖∇H(z_{k+1})‖)`
    pub worst_gradient_margin: f64,
}

impl AbstractReport {
    pub fn holds(&self) -> bool {
        self.decrease_violations == 0 && self.gradient_violations == 0
    }
}

/// `ρ₁ = ε / upper`
pub fn rho1(eps: f64, upper: f64) -> f64 {
    eps / upper
}

/// `ρ₂ = √(2(L² + 2/(b²δ²))) + 1/(b√δ)`
pub fn rho2(l: f64, b: f64, delta: f64) -> f64 {
    (2.0 * (l * l + 2.0 / (b * b * delta * delta))).sqrt() + 1.0 / (b * delta.sqrt())
}

/// Sufficient decrease `ΔH ≤ −ρ₁‖Δx‖²` and the relative-error condition
/// `‖∇H(z_{k+1})‖ ≤ ρ₂(‖Δx_{k+1}‖ + ‖Δx_k‖)` (with `Δx_0 = 0`).
pub fn check_abstract_conditions(trace: &Trace, hp: &HyperParams, bounds: &SafeBounds, l: f64) -> AbstractReport {
    let b = hp.momentum;
    let r1 = rho1(hp.theorem_margin, bounds.upper());
    let r2 = rho2(l, b, bounds.delta);
    let mut report = AbstractReport {
        rho1: r1,
        rho2: r2,
        decrease_violations: 0,
        gradient_violations: 0,
        worst_decrease_margin: f64::INFINITY,
        worst_gradient_margin: f64::INFINITY,
    };
    for w in trace.records.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        let dh = next.lyapunov_h - cur.lyapunov_h;
        let rhs_i = -r1 * next.dx_norm * next.dx_norm;
        report.worst_decrease_margin = report.worst_decrease_margin.min(rhs_i - dh);
        if dh > rhs_i + tol(cur.lyapunov_h) {
            report.decrease_violations += 1;
        }
        let lhs_ii = lyapunov_grad_sq(next.grad_sq_norm, next.inner_a_p_sq, b).sqrt();
        let rhs_ii = r2 * (next.dx_norm + cur.dx_norm);
        report.worst_gradient_margin = report.worst_gradient_margin.min(rhs_ii - lhs_ii);
        if lhs_ii > rhs_ii + tol(rhs_ii) {
            report.gradient_violations += 1;
        }
    }
    report
}
