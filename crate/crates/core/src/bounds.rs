//! Safe effective-step bounds.
//!
//! With `κ(b, α) = (b − (1−α))²/(2bα) + (1−α)/(2b)`:
//!
//! * deterministic: `a_sup = (2/L)(1 − κ − ε)`
//! * stochastic:    `ā_sup = (2/L)(3/4 − κ − ε)`
//!
//! Both require `1 − α < b ≤ 1`. Steps clipped into `[δ, min(bound, a_n/α)]`
//! make the Lyapunov function `H` nonincreasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::HyperParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeBounds {
    pub alpha: f64,
    pub a_sup: f64,
    pub bar_a_sup: f64,
    pub setting: Setting,
    /// Resolved clip floor `δ`.
    pub delta: f64,
    pub valid: bool,
    pub diagnostics: String,
    pub checklist: Vec<Check>,
}

impl SafeBounds {
    /// The bound that applies to the run's setting.
    pub fn upper(&self) -> f64 {
        match self.setting {
            Setting::Deterministic => self.a_sup,
            Setting::Stochastic => self.bar_a_sup,
        }
    }

    /// A fixed upper bound used for both settings.
    pub fn manual(alpha: f64, upper: f64, delta: f64) -> Self {
        SafeBounds {
            alpha,
            a_sup: upper,
            bar_a_sup: upper,
            setting: Setting::Deterministic,
            delta,
            valid: true,
            diagnostics: String::new(),
            checklist: Vec::new(),
        }
    }
}

fn kappa(b: f64, alpha: f64) -> f64 {
    let gap = b - (1.0 - alpha);
    gap * gap / (2.0 * b * alpha) + (1.0 - alpha) / (2.0 * b)
}

fn check_hypotheses(l: f64, b: f64, alpha: f64, eps: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::usage(format!("L must be > 0, got {l}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::usage(format!("α must lie in (0, 1], got {alpha}")));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::usage(format!("ε must be >= 0, got {eps}")));
    }
    if !(b > 1.0 - alpha && b <= 1.0) {
        return Err(Error::Hypothesis(format!(
            "need 1 − α < b ≤ 1, got b = {b}, 1 − α = {}",
            1.0 - alpha
        )));
    }
    Ok(())
}

/// `a_sup = (2/L)(1 − (b−(1−α))²/(2bα) − (1−α)/(2b) − ε)`. May be negative.
pub fn compute_a_sup(l: f64, b: f64, alpha: f64, eps: f64) -> Result<f64> {
    check_hypotheses(l, b, alpha, eps)?;
    Ok((2.0 / l) * (1.0 - kappa(b, alpha) - eps))
}

/// `ā_sup = (2/L)(3/4 − (b−(1−α))²/(2bα) − (1−α)/(2b) − ε)`. May be negative.
pub fn compute_bar_a_sup(l: f64, b: f64, alpha: f64, eps: f64) -> Result<f64> {
    check_hypotheses(l, b, alpha, eps)?;
    Ok((2.0 / l) * (0.75 - kappa(b, alpha) - eps))
}

/// Fill a [`SafeBounds`] for `hp` on an objective with gradient Lipschitz
/// constant `l`. Never fails: problems are reported through `valid` and the
/// checklist.
pub fn validate(hp: &HyperParams, l: f64, policy_alpha: f64, setting: Setting) -> SafeBounds {
    let alpha = hp.alpha_override.unwrap_or(policy_alpha);
    let b = hp.momentum;
    let eps = hp.theorem_margin;
    let mut checklist = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checklist.push(Check {
            name: name.to_string(),
            passed,
            detail,
        })
    };

    let ranges = hp.range_problems();
    push(
        "hyperparameter ranges",
        ranges.is_empty(),
        if ranges.is_empty() {
            "a > 0, b ∈ (0,1], c ∈ [0,1), ε_den > 0, ε > 0, δ > 0".into()
        } else {
            ranges.join("; ")
        },
    );
    push(
        "lipschitz constant",
        l.is_finite() && l > 0.0,
        format!("L = {l}"),
    );
    push(
        "growth constant α ∈ (0, 1]",
        alpha > 0.0 && alpha <= 1.0,
        format!("α = {alpha}"),
    );
    let hyp = b > 1.0 - alpha && b <= 1.0;
    push(
        "1 − α < b ≤ 1",
        hyp,
        format!("1 − α = {}, b = {b}", 1.0 - alpha),
    );

    // Raw formula values are reported even when a hypothesis fails so the
    // caller can see how far off they are.
    let (a_sup, bar_a_sup) = if l > 0.0 && alpha > 0.0 && b > 0.0 {
        let k = kappa(b, alpha);
        ((2.0 / l) * (1.0 - k - eps), (2.0 / l) * (0.75 - k - eps))
    } else {
        (f64::NAN, f64::NAN)
    };
    let (upper, upper_name) = match setting {
        Setting::Deterministic => (a_sup, "a_sup"),
        Setting::Stochastic => (bar_a_sup, "ā_sup"),
    };
    push(
        &format!("{upper_name} ≥ 0"),
        upper >= 0.0,
        format!("{upper_name} = {upper}"),
    );
    let delta = hp.clip_floor.resolve(upper);
    push(
        &format!("nonempty clip interval δ ≤ {upper_name}"),
        delta > 0.0 && delta <= upper,
        format!("δ = {delta}, {upper_name} = {upper}"),
    );

    let valid = checklist.iter().all(|c| c.passed);
    let diagnostics = checklist
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} fails: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    SafeBounds {
        alpha,
        a_sup,
        bar_a_sup,
        setting,
        delta,
        valid,
        diagnostics,
        checklist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClipFloor;

    /// Straight transcription of the formula, kept apart from `kappa`.
    fn oracle_a_sup(l: f64, b: f64, alpha: f64, eps: f64, lead: f64) -> f64 {
        2.0 / l * (lead - (b - (1.0 - alpha)).powi(2) / (2.0 * b * alpha) - (1.0 - alpha) / (2.0 * b) - eps)
    }

    #[test]
    fn no_momentum_case() {
        assert!((compute_a_sup(1.0, 1.0, 1.0, 0.1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(compute_a_sup(2.0, 1.0, 1.0, 0.0).unwrap(), 0.5);
        assert_eq!(compute_bar_a_sup(1.0, 1.0, 1.0, 0.0).unwrap(), 0.5);
        let bar = compute_bar_a_sup(1.0, 1.0, 1.0, 0.05).unwrap();
        assert!((bar - 0.4).abs() < 1e-15);
    }

    #[test]
    fn adam_defaults_margin() {
        let alpha = (1.0f64 - 0.001).sqrt();
        let a = compute_a_sup(1.0, 0.1, alpha, 0.1).unwrap();
        let margin = a / 2.0 + 0.1;
        assert!((margin - 0.947973).abs() < 1e-6, "{margin}");
        assert!((a - oracle_a_sup(1.0, 0.1, alpha, 0.1, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_minus_stochastic_is_half_over_l() {
        for &(l, b, c, eps) in &[(1.0, 0.1, 0.001, 0.1), (3.0, 0.5, 0.2, 0.01), (0.2, 0.9, 0.0, 0.3)] {
            let alpha = (1.0f64 - c).sqrt();
            let d = compute_a_sup(l, b, alpha, eps).unwrap() - compute_bar_a_sup(l, b, alpha, eps).unwrap();
            assert!((d - 1.0 / (2.0 * l)).abs() < 1e-12);
            let bar = compute_bar_a_sup(l, b, alpha, eps).unwrap();
            assert!((bar - oracle_a_sup(l, b, alpha, eps, 0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn hypothesis_violation() {
        assert!(matches!(compute_a_sup(1.0, 0.5, 0.3, 0.1), Err(Error::Hypothesis(_))));
        let hp = HyperParams {
            momentum: 0.5,
            ..HyperParams::default()
        };
        let sb = validate(&hp, 1.0, 0.3, Setting::Deterministic);
        assert!(!sb.valid);
        assert!(sb.diagnostics.contains("1 − α < b ≤ 1"));
    }

    #[test]
    fn negative_bound_is_invalid() {
        let hp = HyperParams {
            momentum: 1.0,
            theorem_margin: 0.6,
            ..HyperParams::default()
        };
        let sb = validate(&hp, 1.0, 1.0, Setting::Deterministic);
        assert!(!sb.valid);
        assert!((sb.a_sup - 2.0 * (1.0 - 0.5 - 0.6)).abs() < 1e-15);
    }

    #[test]
    fn adam_defaults_valid() {
        let hp = HyperParams {
            clip_floor: ClipFloor::Absolute(1e-3),
            ..HyperParams::default()
        };
        let alpha = (1.0f64 - hp.second_moment_rate).sqrt();
        let sb = validate(&hp, 1.0, alpha, Setting::Deterministic);
        assert!(sb.valid, "{}", sb.diagnostics);
        assert!((sb.a_sup - 2.0 * (0.947973 - 0.1)).abs() < 1e-5);
        assert!(sb.bar_a_sup <= sb.a_sup);
    }

    #[test]
    fn floor_above_bound_is_invalid() {
        let hp = HyperParams {
            momentum: 1.0,
            clip_floor: ClipFloor::Absolute(0.9),
            ..HyperParams::default()
        };
        let sb = validate(&hp, 1.0, 1.0, Setting::Deterministic);
        assert!(!sb.valid);
        assert!(sb.diagnostics.contains("nonempty clip interval"));
    }

    #[test]
    fn monotone_in_eps_and_l() {
        let alpha = (1.0f64 - 0.001).sqrt();
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let a = compute_a_sup(1.0, 0.1, alpha, 0.01 * i as f64 + 0.001).unwrap();
            assert!(a < prev);
            prev = a;
        }
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let a = compute_a_sup(0.1 * i as f64, 0.1, alpha, 0.1).unwrap();
            assert!(a < prev);
            prev = a;
        }
    }
}
