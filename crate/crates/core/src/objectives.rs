//! Built-in test functions.
//!
//! Each [`Objective`] bundles an analytic value and gradient with a gradient
//! Lipschitz constant, the known infimum, an optional KL exponent and a start
//! point. The Lipschitz constant is global for the quadratic; for the others
//! it is valid on the region described in `domain_note`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Vector;

/// Cutoff radius used for the Lipschitz constant of `|x|^p`, `1 < p < 2`.
pub const MONOMIAL_CUTOFF: f64 = 1e-6;

const ROSENBROCK_SAMPLES: usize = 10_000;
const ROSENBROCK_INFLATION: f64 = 1.5;
const ROSENBROCK_SEED: u64 = 0x5EED_2020;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `(λ/2)‖x‖²`
    Quadratic { lambda: f64 },
    /// `|x|^p`, one-dimensional.
    Monomial { p: f64 },
    /// Sum of `(1 − x₂ᵢ)² + 100(x₂ᵢ₊₁ − x₂ᵢ²)²` over coordinate pairs.
    Rosenbrock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub id: String,
    pub kind: ObjectiveKind,
    pub dim: usize,
    pub lipschitz: f64,
    pub infimum: f64,
    pub kl_exponent: Option<f64>,
    pub domain_note: String,
    /// Default start point; the Lipschitz constant is computed for the level set it defines.
    pub start: Vector,
    /// The minimizer is reached in finitely many steps; runs stop when an
    /// iterate reaches or crosses it.
    pub finite_reach: bool,
}

pub fn quadratic(d: usize, lambda: f64) -> Result<Objective> {
    if d == 0 {
        return Err(Error::usage("quadratic needs d >= 1"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::usage(format!("quadratic curvature must be > 0, got {lambda}")));
    }
    Ok(Objective {
        id: format!("quadratic:d={d},lam={lambda}"),
        kind: ObjectiveKind::Quadratic { lambda },
        dim: d,
        lipschitz: lambda,
        infimum: 0.0,
        kl_exponent: Some(0.5),
        domain_note: "global: gradient is λ-Lipschitz on all of R^d; sampling box [-5, 5]^d".into(),
        start: Vector::filled(d, 1.0),
        finite_reach: false,
    })
}

pub fn monomial(p: f64) -> Result<Objective> {
    if !(1.0..=7.0).contains(&p) {
        return Err(Error::usage(format!("monomial exponent must lie in [1, 7], got {p}")));
    }
    let x0: f64 = 1.0;
    let (lipschitz, domain_note) = if p >= 2.0 {
        (
            p * (p - 1.0) * x0.abs().max(1.0).powf(p - 2.0),
            "L = p(p-1) on the level set [-1, 1] reached from x0 = 1; sampling interval [-1, 1]"
                .to_string(),
        )
    } else if p > 1.0 {
        (
            p * (p - 1.0) * MONOMIAL_CUTOFF.powf(p - 2.0),
            format!(
                "gradient is not Lipschitz at 0 for p < 2; L = p(p-1)r^(p-2) with r = {MONOMIAL_CUTOFF:e} \
                 is valid for pairs in [r, 1]; sampling interval [0.01, 1]"
            ),
        )
    } else {
        (
            1.0,
            "gradient is constant on (0, inf), so any L > 0 holds on the positive half-line; \
             L = 1 recorded; not Lipschitz across 0; sampling interval [0.01, 1]"
                .to_string(),
        )
    };
    Ok(Objective {
        id: format!("monomial:p={p}"),
        kind: ObjectiveKind::Monomial { p },
        dim: 1,
        lipschitz,
        infimum: 0.0,
        kl_exponent: Some(1.0 / p),
        domain_note,
        start: Vector::filled(1, x0),
        finite_reach: p < 2.0,
    })
}

pub fn rosenbrock(d: usize) -> Result<Objective> {
    if d < 2 || !d.is_multiple_of(2) {
        return Err(Error::usage(format!("rosenbrock needs an even d >= 2, got {d}")));
    }
    let start = Vector::new((0..d).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect())?;
    let level = rosenbrock_value(start.as_slice());
    let sampled = rosenbrock_max_hessian_norm(level, ROSENBROCK_SAMPLES, ROSENBROCK_SEED);
    let lipschitz = ROSENBROCK_INFLATION * sampled;
    Ok(Objective {
        id: format!("rosenbrock:d={d}"),
        kind: ObjectiveKind::Rosenbrock,
        dim: d,
        lipschitz,
        infimum: 0.0,
        kl_exponent: None,
        domain_note: format!(
            "empirical L: max Hessian spectral norm {sampled:.6e} over {ROSENBROCK_SAMPLES} samples of \
             the level set f <= {level} (start point), inflated x{ROSENBROCK_INFLATION}"
        ),
        start,
        finite_reach: false,
    })
}

/// Resolve a CLI id such as `quadratic:d=2,lam=1`, `monomial:p=4` or `rosenbrock:d=2`.
pub fn parse_objective(id: &str) -> Result<Objective> {
    let (family, params) = id.split_once(':').unwrap_or((id, ""));
    let mut pairs = Vec::new();
    for part in params.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("objective parameter `{part}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("objective parameter `{part}` is not a number")))?;
        pairs.push((k.trim(), v));
    }
    let get = |key: &str| {
        pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::usage(format!("objective `{id}` is missing `{key}`")))
    };
    let as_dim = |v: f64| {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::usage(format!("dimension must be a positive integer, got {v}")))
        }
    };
    let allowed: &[&str] = match family.trim() {
        "quadratic" => &["d", "lam"],
        "monomial" => &["p"],
        "rosenbrock" => &["d"],
        other => return Err(Error::usage(format!("unknown objective family `{other}`"))),
    };
    if let Some((k, _)) = pairs.iter().find(|(k, _)| !allowed.contains(k)) {
        return Err(Error::usage(format!("unknown parameter `{k}` for `{family}`")));
    }
    match family.trim() {
        "quadratic" => quadratic(as_dim(get("d")?)?, get("lam")?),
        "monomial" => monomial(get("p")?),
        _ => rosenbrock(as_dim(get("d")?)?),
    }
}

impl Objective {
    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::usage(format!(
                "{} expects dimension {}, got {}",
                self.id,
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        let v = match self.kind {
            ObjectiveKind::Quadratic { lambda } => 0.5 * lambda * x.norm_sq(),
            ObjectiveKind::Monomial { p } => x[0].abs().powf(p),
            ObjectiveKind::Rosenbrock => rosenbrock_value(x.as_slice()),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain(format!("{} value is not finite", self.id)))
        }
    }

    pub fn grad(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        match self.kind {
            ObjectiveKind::Quadratic { lambda } => x.scale(lambda),
            ObjectiveKind::Monomial { p } => {
                let t = x[0];
                let g = if t == 0.0 {
                    0.0
                } else {
                    p * t.signum() * t.abs().powf(p - 1.0)
                };
                Vector::new(vec![g])
            }
            ObjectiveKind::Rosenbrock => {
                let s = x.as_slice();
                let mut g = vec![0.0; s.len()];
                for i in (0..s.len()).step_by(2) {
                    let (u, w) = (s[i], s[i + 1]);
                    let r = w - u * u;
                    g[i] = -2.0 * (1.0 - u) - 400.0 * u * r;
                    g[i + 1] = 200.0 * r;
                }
                Vector::new(g)
            }
        }
    }

    /// Whether the step `prev → next` reached or crossed the minimizer of a finite-reach objective.
    pub fn reached_minimizer(&self, prev: &Vector, next: &Vector) -> bool {
        if !self.finite_reach {
            return false;
        }
        let (a, b) = (prev[0], next[0]);
        b == 0.0 || (a != 0.0 && a.signum() != b.signum())
    }

    /// Uniform draw from the region on which `lipschitz` is claimed.
    pub fn sample_domain<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let c = match self.kind {
            ObjectiveKind::Quadratic { .. } => (0..self.dim).map(|_| rng.random_range(-5.0..=5.0)).collect(),
            ObjectiveKind::Monomial { p } if p < 2.0 => vec![rng.random_range(0.01..=1.0)],
            ObjectiveKind::Monomial { .. } => vec![rng.random_range(-1.0..=1.0)],
            ObjectiveKind::Rosenbrock => {
                // Each block inside its share of the level set keeps the sum inside it.
                let share = rosenbrock_value(&self.start.as_slice()[..2]);
                let mut out = Vec::with_capacity(self.dim);
                for _ in 0..self.dim / 2 {
                    let (u, w) = sample_rosenbrock_block(share, rng);
                    out.push(u);
                    out.push(w);
                }
                out
            }
        };
        Vector::new(c).expect("sampled points are finite")
    }
}

fn rosenbrock_value(s: &[f64]) -> f64 {
    s.chunks_exact(2)
        .map(|b| (1.0 - b[0]).powi(2) + 100.0 * (b[1] - b[0] * b[0]).powi(2))
        .sum()
}

/// Rejection sample from `{(u, w): (1−u)² + 100(w−u²)² ≤ level}`.
fn sample_rosenbrock_block<R: Rng + ?Sized>(level: f64, rng: &mut R) -> (f64, f64) {
    let half_u = level.sqrt();
    let half_w = level.sqrt() / 10.0;
    loop {
        let u = rng.random_range(1.0 - half_u..=1.0 + half_u);
        let w = u * u + rng.random_range(-half_w..=half_w);
        if rosenbrock_value(&[u, w]) <= level {
            return (u, w);
        }
    }
}

/// Spectral norm of the 2×2 block Hessian.
fn rosenbrock_block_hessian_norm(u: f64, w: f64) -> f64 {
    let h11 = 1200.0 * u * u - 400.0 * w + 2.0;
    let h12 = -400.0 * u;
    let h22 = 200.0;
    let mean = 0.5 * (h11 + h22);
    let rad = (0.25 * (h11 - h22).powi(2) + h12 * h12).sqrt();
    (mean + rad).abs().max((mean - rad).abs())
}

/// The Hessian is block diagonal and every block of a point in `{f ≤ level}`
/// lies in the 2-d set `{f_block ≤ level}`, so sampling that set suffices.
fn rosenbrock_max_hessian_norm(level: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let (u, w) = sample_rosenbrock_block(level, &mut rng);
            rosenbrock_block_hessian_norm(u, w)
        })
        .fold(0.0, f64::max)
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_grad(f: &Objective, x: &Vector, h: f64) -> Result<Vector> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::usage(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.as_slice().to_vec();
    for i in 0..x.len() {
        let xi = probe[i];
        probe[i] = xi + h;
        let up = f.value(&Vector::new(probe.clone())?)?;
        probe[i] = xi - h;
        let down = f.value(&Vector::new(probe.clone())?)?;
        probe[i] = xi;
        out.push((up - down) / (2.0 * h));
    }
    Vector::new(out)
}
