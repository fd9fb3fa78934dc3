//! Domain types shared by every module.
//!
//! All arithmetic is `f64`. A [`Vector`] never stores a non-finite
//! component: every constructor and arithmetic helper checks its output and
//! reports a domain error instead of propagating NaN or infinity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of finite reals. Operations between vectors are coordinatewise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

/// Coordinatewise binary operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordOp {
    Product,
    Quotient,
    /// `u_i ^ w_i`
    Power,
}

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite component {} at index {i}",
                components[i]
            )));
        }
        Ok(Vector(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// # Panics
    /// If `value` is not finite.
    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Vector(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn same_len(&self, other: &Vector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::usage(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Elementwise map followed by a finiteness check.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Vector> {
        Vector::new(self.0.iter().map(|&c| f(c)).collect())
    }

    /// Elementwise combination of two equal-length vectors.
    pub fn zip_map(&self, other: &Vector, mut f: impl FnMut(f64, f64) -> f64) -> Result<Vector> {
        self.same_len(other)?;
        Vector::new(self.0.iter().zip(&other.0).map(|(&u, &w)| f(u, w)).collect())
    }

    pub fn coordinatewise(op: CoordOp, u: &Vector, w: &Vector) -> Result<Vector> {
        u.same_len(w)?;
        match op {
            CoordOp::Product => u.zip_map(w, |a, b| a * b),
            CoordOp::Quotient => {
                if let Some(i) = w.0.iter().position(|&c| c == 0.0) {
                    return Err(Error::domain(format!("division by zero at index {i}")));
                }
                u.zip_map(w, |a, b| a / b)
            }
            CoordOp::Power => u.zip_map(w, f64::powf),
        }
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Vector> {
        self.map(|c| s * c)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.same_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `⟨a, p²⟩ = Σ a_i p_i²`
    pub fn weighted_sq(&self, weights: &Vector) -> Result<f64> {
        self.same_len(weights)?;
        Ok(self.0.iter().zip(&weights.0).map(|(p, a)| a * p * p).sum())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Lower clip `δ` on the effective step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipFloor {
    Absolute(f64),
    /// Fraction of the active upper bound (`a_sup` or `ā_sup`).
    FractionOfBound(f64),
}

impl ClipFloor {
    pub fn resolve(self, upper: f64) -> f64 {
        match self {
            ClipFloor::Absolute(d) => d,
            ClipFloor::FractionOfBound(frac) => frac * upper,
        }
    }
}

/// Algorithm constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Base rate `a`.
    pub base_rate: f64,
    /// Momentum rate `b` in (0, 1]; `b = 1` means no momentum.
    pub momentum: f64,
    /// Second-moment EMA rate `c` in [0, 1).
    pub second_moment_rate: f64,
    /// Offset in `a / (eps_den + sqrt(v))`.
    pub eps_den: f64,
    /// Margin `ε` in the safe-bound formulas.
    pub theorem_margin: f64,
    pub clip_floor: ClipFloor,
    /// Replaces the policy's growth constant `α` when set.
    pub alpha_override: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            base_rate: 1e-3,
            momentum: 0.1,
            second_moment_rate: 1e-3,
            eps_den: 0.1,
            theorem_margin: 0.1,
            clip_floor: ClipFloor::FractionOfBound(1e-3),
            alpha_override: None,
        }
    }
}

impl HyperParams {
    /// Range checks that do not depend on the objective. Returns every problem found.
    pub fn range_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.base_rate) {
            out.push(format!("base rate a = {} must be > 0", self.base_rate));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            out.push(format!("momentum b = {} must lie in (0, 1]", self.momentum));
        }
        if !(self.second_moment_rate >= 0.0 && self.second_moment_rate < 1.0) {
            out.push(format!(
                "second-moment rate c = {} must lie in [0, 1)",
                self.second_moment_rate
            ));
        }
        if !positive(self.eps_den) {
            out.push(format!("eps_den = {} must be > 0", self.eps_den));
        }
        if !positive(self.theorem_margin) {
            out.push(format!("theorem margin ε = {} must be > 0", self.theorem_margin));
        }
        match self.clip_floor {
            ClipFloor::Absolute(d) | ClipFloor::FractionOfBound(d) if !positive(d) => {
                out.push(format!("clip floor δ = {d} must be > 0"));
            }
            _ => {}
        }
        if let Some(alpha) = self.alpha_override {
            if !positive(alpha) {
                out.push(format!("alpha override {alpha} must be > 0"));
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let problems = self.range_problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Usage(problems.join("; ")))
        }
    }
}

/// Iterate of the momentum recursion at index `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub x: Vector,
    /// Momentum buffer.
    pub p: Vector,
    /// Policy accumulator: EMA of g² for Adam, running sum of g² for AdaGrad.
    pub v: Vector,
    /// Effective step `a_n`.
    pub a_eff: Vector,
    pub n: usize,
}

impl IterateState {
    /// `p₀ = 0`, `v₀ = 0`.
    pub fn initial(x0: Vector, a0: Vector) -> Self {
        let d = x0.len();
        IterateState {
            x: x0,
            p: Vector::zeros(d),
            v: Vector::zeros(d),
            a_eff: a0,
            n: 0,
        }
    }
}

/// Per-iteration log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    pub f_val: f64,
    pub grad_sq_norm: f64,
    pub lyapunov_h: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub p_sq_norm: f64,
    pub dx_norm: f64,
    /// `⟨a_n, p_n²⟩`
    pub inner_a_p_sq: f64,
}
