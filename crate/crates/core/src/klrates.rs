//! Convergence-rate regimes on `|x|^p` and the one-dimensional toy experiment.
//!
//! With KL exponent `θ = 1/p`, the gap `f(x_k) − f*` is expected to reach
//! zero in finitely many steps for `θ > 1/2`, to decay geometrically for
//! `θ = 1/2`, and to decay like `k^{1/(2θ−1)}` for `θ < 1/2`. The classifier
//! decides which of these a finite trace looks like.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, Algorithm, RunConfig, StopReason, Trace};
use crate::error::{Error, Result};
use crate::objectives::monomial;
use crate::stepsize::{ClipMode, PolicyKind};
use crate::types::{HyperParams, Vector};

/// Gaps at or below this are treated as zero.
pub const FINITE_GAP: f64 = 1e-14;
/// A finite-reach jump must come from a gap above this.
pub const JUMP_FROM_GAP: f64 = 1e-8;
/// The fit window ends where the gap first drops below this.
pub const FLOOR_GAP: f64 = 1e-13;
pub const LINEAR_R2: f64 = 0.99;
pub const SUBLINEAR_R2: f64 = 0.95;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Finite,
    Linear,
    Sublinear,
    Inconclusive,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Finite => "finite",
            Regime::Linear => "linear",
            Regime::Sublinear => "sublinear",
            Regime::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateClassification {
    pub regime: Regime,
    /// Contraction factor per step, for the linear regime.
    pub fitted_q: Option<f64>,
    /// Log-log slope, for the sublinear regime.
    pub fitted_slope: Option<f64>,
    /// `1/(2θ − 1)` when `θ < 1/2`.
    pub theory_slope: Option<f64>,
    /// R² of the fit that decided the regime.
    pub fit_quality: Option<f64>,
    pub semilog_r2: Option<f64>,
    pub loglog_r2: Option<f64>,
    /// First index at which the gap is zero for good (finite regime).
    pub finite_at: Option<usize>,
    /// Half-open index range used for the fits.
    pub window: Option<(usize, usize)>,
}

impl RateClassification {
    fn bare(regime: Regime, theory_slope: Option<f64>) -> Self {
        RateClassification {
            regime,
            fitted_q: None,
            fitted_slope: None,
            theory_slope,
            fit_quality: None,
            semilog_r2: None,
            loglog_r2: None,
            finite_at: None,
            window: None,
        }
    }
}

pub fn theory_slope(theta: f64) -> Option<f64> {
    (theta < 0.5).then(|| 1.0 / (2.0 * theta - 1.0))
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Classify with the default fit window.
pub fn classify_rate(trace: &Trace, f_star: f64, theta: Option<f64>) -> RateClassification {
    classify_rate_with_window(trace, f_star, theta, DEFAULT_WINDOW_FRACTION)
}

/// Classify using the last `window_fraction` of the pre-floor trace for fits.
pub fn classify_rate_with_window(
    trace: &Trace,
    f_star: f64,
    theta: Option<f64>,
    window_fraction: f64,
) -> RateClassification {
    let gaps: Vec<f64> = trace.records.iter().map(|r| (r.f_val - f_star).max(0.0)).collect();
    let reached = trace.summary.stop_reason == StopReason::FiniteReach;
    classify_gaps(&gaps, reached, theta, window_fraction)
}

/// Regime rules, in order:
///
/// 1. terminal gap not below 1% of the initial gap → inconclusive;
/// 2. finite if the run stopped at the minimizer, or the gap jumps from
///    above [`JUMP_FROM_GAP`] straight to at most [`FINITE_GAP`] and stays there;
/// 3. linear if the semi-log fit has R² ≥ 0.99, `q ∈ (0,1)`, and fits at
///    least as well as the log-log one;
/// 4. sublinear if the log-log fit has R² ≥ 0.95 and negative slope;
/// 5. otherwise inconclusive.
///
/// Smooth geometric decay passes through every small gap on its way down,
/// so only a jump counts as finite; and a power law looks straight on a
/// semi-log plot over a short window, hence the comparison in rule 3.
pub fn classify_gaps(gaps: &[f64], reached_minimizer: bool, theta: Option<f64>, window_fraction: f64) -> RateClassification {
    let theory = theta.and_then(theory_slope);
    let Some((&first, &last)) = gaps.first().zip(gaps.last()) else {
        return RateClassification::bare(Regime::Inconclusive, theory);
    };
    if !(first > 0.0 && last < 1e-2 * first) {
        return RateClassification::bare(Regime::Inconclusive, theory);
    }

    let settled_from = gaps.iter().rposition(|&g| g > FINITE_GAP).map_or(0, |i| i + 1);
    let jumped = settled_from > 0 && settled_from < gaps.len() && gaps[settled_from - 1] > JUMP_FROM_GAP;
    if reached_minimizer || jumped {
        let mut c = RateClassification::bare(Regime::Finite, theory);
        c.finite_at = Some(if jumped { settled_from } else { gaps.len() - 1 });
        return c;
    }

    let end = gaps.iter().position(|&g| g <= FLOOR_GAP).unwrap_or(gaps.len());
    let start = ((end as f64) * (1.0 - window_fraction)).floor() as usize;
    let (ks, logs): (Vec<f64>, Vec<f64>) = (start.max(1)..end)
        .filter(|&k| gaps[k] > 0.0)
        .map(|k| (k as f64, gaps[k].ln()))
        .unzip();
    if ks.len() < 3 {
        return RateClassification::bare(Regime::Inconclusive, theory);
    }
    let (semi_slope, _, semi_r2) = linear_fit(&ks, &logs);
    let log_ks: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let (ll_slope, _, ll_r2) = linear_fit(&log_ks, &logs);

    let mut c = RateClassification::bare(Regime::Inconclusive, theory);
    c.semilog_r2 = Some(semi_r2);
    c.loglog_r2 = Some(ll_r2);
    c.window = Some((start.max(1), end));
    let q = semi_slope.exp();
    if semi_r2 >= LINEAR_R2 && q > 0.0 && q < 1.0 && semi_r2 >= ll_r2 {
        c.regime = Regime::Linear;
        c.fitted_q = Some(q);
        c.fit_quality = Some(semi_r2);
    } else if ll_r2 >= SUBLINEAR_R2 && ll_slope < 0.0 {
        c.regime = Regime::Sublinear;
        c.fitted_slope = Some(ll_slope);
        c.fit_quality = Some(ll_r2);
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure1Algorithm {
    ClippedAdam,
    AdamUnclipped,
    Gd,
}

impl Figure1Algorithm {
    pub const ALL: [Figure1Algorithm; 3] = [
        Figure1Algorithm::ClippedAdam,
        Figure1Algorithm::AdamUnclipped,
        Figure1Algorithm::Gd,
    ];
}

impl fmt::Display for Figure1Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure1Algorithm::ClippedAdam => "clipped_adam",
            Figure1Algorithm::AdamUnclipped => "adam_unclipped",
            Figure1Algorithm::Gd => "gd",
        })
    }
}

impl FromStr for Figure1Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clipped_adam" => Ok(Figure1Algorithm::ClippedAdam),
            "adam_unclipped" => Ok(Figure1Algorithm::AdamUnclipped),
            "gd" => Ok(Figure1Algorithm::Gd),
            other => Err(Error::usage(format!(
                "unknown algorithm {other:?} (expected clipped_adam, adam_unclipped or gd)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Options {
    pub p_values: Vec<f64>,
    pub algorithms: Vec<Figure1Algorithm>,
    pub max_iter: usize,
    pub hp: HyperParams,
    /// Gradient-descent step as a multiple of `1/L`.
    pub gd_step_scale: f64,
}

impl Default for Figure1Options {
    fn default() -> Self {
        Figure1Options {
            p_values: vec![1.0, 1.3, 1.5, 2.0, 3.0, 4.0, 6.0],
            algorithms: Figure1Algorithm::ALL.to_vec(),
            max_iter: 200_000,
            hp: HyperParams::default(),
            gd_step_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Figure1Cell {
    pub p: f64,
    pub algorithm: Figure1Algorithm,
    pub classification: RateClassification,
    /// Set when the run produced a non-finite value; the trace is partial.
    pub divergence: Option<String>,
    #[serde(skip)]
    pub trace: Trace,
}

impl Figure1Cell {
    /// `(k, f(x_k), f(x_k) − f*)` rows.
    pub fn series(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let f_star = self.trace.config.objective.infimum;
        self.trace.records.iter().map(move |r| (r.n, r.f_val, r.f_val - f_star))
    }
}

fn figure1_config(p: f64, algorithm: Figure1Algorithm, opts: &Figure1Options) -> Result<RunConfig> {
    let objective = monomial(p)?;
    let algo = match algorithm {
        Figure1Algorithm::ClippedAdam => Algorithm::clipped_adam(),
        Figure1Algorithm::AdamUnclipped => Algorithm::Momentum {
            policy: PolicyKind::RmspropAdam,
            clipping: ClipMode::Off,
        },
        Figure1Algorithm::Gd => Algorithm::GradientDescent {
            step: opts.gd_step_scale / objective.lipschitz,
        },
    };
    Ok(RunConfig::new(objective, algo)
        .with_hp(opts.hp.clone())
        .with_x0(Vector::filled(1, 1.0))
        .with_max_iter(opts.max_iter)
        // Stop only at an exactly stationary point.
        .with_stop_tol(f64::MIN_POSITIVE)
        .with_vectors(false))
}

/// Run every `(p, algorithm)` cell from `x₀ = 1` in parallel and classify it.
/// Cells are returned in `p`-major order.
pub fn figure1_experiment(opts: &Figure1Options) -> Result<Vec<Figure1Cell>> {
    if let Some(p) = opts.p_values.iter().find(|p| !(1.0..=7.0).contains(*p)) {
        return Err(Error::usage(format!("p = {p} outside [1, 7]")));
    }
    let jobs: Vec<(f64, Figure1Algorithm)> = opts
        .p_values
        .iter()
        .flat_map(|&p| opts.algorithms.iter().map(move |&a| (p, a)))
        .collect();
    jobs.into_par_iter()
        .map(|(p, algorithm)| {
            let config = figure1_config(p, algorithm, opts)?;
            let (trace, divergence) = match run(&config) {
                Ok(t) => (t, None),
                Err(Error::Divergence { reason, trace, .. }) => (*trace, Some(reason)),
                Err(e) => return Err(e),
            };
            let classification = if divergence.is_some() {
                RateClassification::bare(Regime::Inconclusive, theory_slope(1.0 / p))
            } else {
                classify_rate(&trace, config.objective.infimum, config.objective.kl_exponent)
            };
            Ok(Figure1Cell {
                p,
                algorithm,
                classification,
                divergence,
                trace,
            })
        })
        .collect()
}
