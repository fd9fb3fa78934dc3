//! Effective-step policies and the clipping rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::SafeBounds;
use crate::error::{Error, Result};
use crate::types::{HyperParams, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// `a_{n+1} = a`
    Constant,
    /// `a_{n+1} = a / sqrt(Σ g²)`
    Adagrad,
    /// `a_{n+1} = a / (ε_den + sqrt(v_{n+1}))`, `v ← v + c(g² − v)`. No bias correction.
    #[serde(rename = "adam")]
    RmspropAdam,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PolicyKind::Constant),
            "adagrad" => Ok(PolicyKind::Adagrad),
            "adam" | "rmsprop" => Ok(PolicyKind::RmspropAdam),
            other => Err(Error::usage(format!(
                "unknown step policy `{other}` (expected constant, adagrad or adam)"
            ))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Constant => "constant",
            PolicyKind::Adagrad => "adagrad",
            PolicyKind::RmspropAdam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    Off,
    /// `max(δ, min(raw, bound, prev/α))`
    Full,
    /// `min(raw, bound, prev/α)` with no floor.
    UpperOnly,
}

impl FromStr for ClipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ClipMode::Off),
            "on" | "full" => Ok(ClipMode::Full),
            "upper" | "upper_only" => Ok(ClipMode::UpperOnly),
            other => Err(Error::usage(format!(
                "unknown clipping mode `{other}` (expected on, off or upper)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepPolicy {
    kind: PolicyKind,
    base_rate: f64,
    second_moment_rate: f64,
    eps_den: f64,
    /// Sum of g² (AdaGrad) or the EMA `v` (Adam); unused for constant steps.
    state: Vector,
}

impl StepPolicy {
    pub fn new(kind: PolicyKind, hp: &HyperParams, dim: usize) -> Self {
        StepPolicy {
            kind,
            base_rate: hp.base_rate,
            second_moment_rate: hp.second_moment_rate,
            eps_den: hp.eps_den,
            state: Vector::zeros(dim),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn state(&self) -> &Vector {
        &self.state
    }

    /// Growth constant `α` with `a_{n+1} ≤ a_n / α` for the unclipped steps.
    pub fn alpha(&self) -> f64 {
        policy_alpha(self.kind, self.second_moment_rate)
    }

    /// Step before any update has happened; only multiplies `p₀ = 0`.
    pub fn initial_step(&self) -> Vector {
        let a0 = match self.kind {
            PolicyKind::Constant | PolicyKind::Adagrad => self.base_rate,
            PolicyKind::RmspropAdam => self.base_rate / self.eps_den,
        };
        Vector::filled(self.state.len(), a0)
    }

    /// Fold `g` into the accumulator and return the new raw step.
    pub fn raw_step(&mut self, g: &Vector) -> Result<Vector> {
        let a = self.base_rate;
        match self.kind {
            PolicyKind::Constant => Ok(Vector::filled(g.len(), a)),
            PolicyKind::Adagrad => {
                let sum = self.state.zip_map(g, |s, gi| s + gi * gi)?;
                if let Some(i) = sum.iter().position(|&s| s == 0.0) {
                    return Err(Error::domain(format!(
                        "adagrad accumulator is zero at coordinate {i}"
                    )));
                }
                let step = sum.map(|s| a / s.sqrt())?;
                self.state = sum;
                Ok(step)
            }
            PolicyKind::RmspropAdam => {
                let c = self.second_moment_rate;
                let v = self.state.zip_map(g, |v, gi| (1.0 - c) * v + c * gi * gi)?;
                let step = v.map(|vi| a / (self.eps_den + vi.sqrt()))?;
                self.state = v;
                Ok(step)
            }
        }
    }
}

pub fn policy_alpha(kind: PolicyKind, second_moment_rate: f64) -> f64 {
    match kind {
        PolicyKind::Constant | PolicyKind::Adagrad => 1.0,
        PolicyKind::RmspropAdam => (1.0 - second_moment_rate).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clipped {
    pub step: Vector,
    /// Coordinates where `δ` exceeded the growth cap `prev/α` and won.
    pub floor_overrides: usize,
}

fn check_prev(prev: &Vector) -> Result<()> {
    if prev.iter().any(|&p| p <= 0.0) {
        return Err(Error::usage("previous step must be positive in every coordinate"));
    }
    Ok(())
}

/// `max(δ, min(raw, bound, prev/α))` coordinatewise, with `bound = bounds.upper()`.
pub fn clip_step(raw: &Vector, prev: &Vector, bounds: &SafeBounds, delta: f64) -> Result<Clipped> {
    let upper = bounds.upper();
    if delta.is_nan() || delta <= 0.0 || delta > upper {
        return Err(Error::Config(format!(
            "empty clipping interval: δ = {delta} > bound = {upper}"
        )));
    }
    check_prev(prev)?;
    let capped = clip_upper(raw, prev, bounds)?;
    let mut floor_overrides = 0;
    let step = capped.zip_map(prev, |c, p| {
        if delta > p / bounds.alpha {
            floor_overrides += 1;
        }
        c.max(delta)
    })?;
    Ok(Clipped {
        step,
        floor_overrides,
    })
}

/// `min(raw, bound, prev/α)` coordinatewise, with no lower floor.
pub fn clip_upper(raw: &Vector, prev: &Vector, bounds: &SafeBounds) -> Result<Vector> {
    let upper = bounds.upper();
    if upper.is_nan() || upper <= 0.0 {
        return Err(Error::Config(format!("upper step bound {upper} is not positive")));
    }
    check_prev(prev)?;
    let alpha = bounds.alpha;
    raw.zip_map(prev, |r, p| r.min(upper).min(p / alpha))
}
