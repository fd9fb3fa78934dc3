//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::time::{Duration, Instant};

use bounded_adam::bounds::compute_a_sup;
use bounded_adam::diagnostics::{
    check_abstract_conditions, check_descent_lemma, check_gd_bound, check_lyapunov_monotone,
    check_prop_no_lower_bound, check_theorem1, check_theorem2, theorem1_bound,
};
use bounded_adam::engine::{
    run, step_heavy_ball_coordinatewise, Algorithm, Noise, RunConfig, Trace,
};
use bounded_adam::klrates::{classify_rate, figure1_experiment, Figure1Algorithm, Figure1Options, Regime};
use bounded_adam::objectives::{finite_diff_grad, monomial, quadratic, rosenbrock, Objective};
use bounded_adam::stepsize::{ClipMode, PolicyKind};
use bounded_adam::{HyperParams, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn clipped_adam_run(objective: Objective, iters: usize) -> Trace {
    run(&RunConfig::new(objective, Algorithm::clipped_adam()).with_max_iter(iters)).expect("clipped run")
}

fn standard_objectives() -> Vec<Objective> {
    vec![quadratic(2, 1.0).unwrap(), rosenbrock(2).unwrap(), monomial(4.0).unwrap()]
}

fn standard_runs() -> Vec<Trace> {
    standard_objectives()
        .into_iter()
        .map(|o| clipped_adam_run(o, 10_000))
        .collect()
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn lyapunov_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for t in standard_runs() {
        let r = check_lyapunov_monotone(&t);
        ok &= r.holds() && t.iterations() == 10_000;
        details.push(format!("{}: {} violations", t.config.objective.id, r.violations));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 5.0);
    outcome(ok, format!("{} in {:.2?}", details.join(", "), elapsed))
}

fn rate_bound() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for t in standard_runs() {
        let sb = t.bounds.clone().unwrap();
        let r = check_theorem1(&t, &sb, &t.config.hp, t.h0(), t.config.objective.infimum);
        ok &= r.holds() && r.rate.rows.len() == 10_000;
        details.push(format!(
            "{}: worst lhs/bound {:.2e}, Σ‖p‖² {:.3e} ≤ {:.3e}",
            t.config.objective.id, r.rate.worst_ratio, r.sum_total, r.sum_bound
        ));
    }
    outcome(ok, details.join("; "))
}

fn descent_lemma() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    let mut valid_runs = standard_runs();
    let hp_const = HyperParams {
        base_rate: 0.05,
        momentum: 0.3,
        ..HyperParams::default()
    };
    valid_runs.push(
        run(&RunConfig::new(
            quadratic(2, 1.0).unwrap(),
            Algorithm::Momentum {
                policy: PolicyKind::Adagrad,
                clipping: ClipMode::Full,
            },
        )
        .with_hp(hp_const.clone())
        .with_max_iter(2000))
        .unwrap(),
    );
    for t in &valid_runs {
        let sb = t.bounds.clone().unwrap();
        let hp = &t.config.hp;
        let r = check_descent_lemma(t, t.config.objective.lipschitz, hp.momentum, sb.alpha, hp.theorem_margin).unwrap();
        ok &= !r.violated;
        details.push(format!("{}: margin {:.1e}", t.config.objective.id, r.worst_margin));
    }

    // Constant step 3/L with no clipping: H must go up.
    let q = quadratic(2, 1.0).unwrap();
    let hp_bad = HyperParams {
        base_rate: 3.0 / q.lipschitz,
        momentum: 1.0,
        ..HyperParams::default()
    };
    let bad = run(&RunConfig::new(
        q,
        Algorithm::Momentum {
            policy: PolicyKind::Constant,
            clipping: ClipMode::Off,
        },
    )
    .with_hp(hp_bad.clone())
    .with_max_iter(20))
    .unwrap();
    let r = check_descent_lemma(&bad, bad.config.objective.lipschitz, 1.0, 1.0, hp_bad.theorem_margin).unwrap();
    ok &= r.violated;
    details.push(format!(
        "adversarial a=3/L: violated={} ({} ascents)",
        r.violated, r.ascent_violations
    ));
    outcome(ok, details.join("; "))
}

fn safe_bound_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let l = 10f64.powf(rng.random_range(-2.0..2.0));
        let eps = rng.random_range(0.0..0.5);
        let got = compute_a_sup(l, 1.0, 1.0, eps).unwrap();
        let want = (1.0 / l) * (1.0 - 2.0 * eps);
        worst = worst.max(((got - want) / want).abs());
    }
    outcome(worst <= 1e-15, format!("worst relative error {worst:.2e} over 100 pairs"))
}

fn gd_bound() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for obj in [quadratic(2, 1.0).unwrap(), rosenbrock(2).unwrap()] {
        let gamma = 1.0 / obj.lipschitz;
        let (l, inf) = (obj.lipschitz, obj.infimum);
        let t = run(&RunConfig::new(obj, Algorithm::GradientDescent { step: gamma }).with_max_iter(10_000)).unwrap();
        let r = check_gd_bound(&t, gamma, l, inf).unwrap();
        ok &= r.all_hold && r.rows.len() == 10_000;
        details.push(format!("{}: worst lhs/bound {:.2e}", t.config.objective.id, r.worst_ratio));
    }
    outcome(ok, details.join("; "))
}

fn upper_clip_bound() -> Outcome {
    let t = run(&RunConfig::new(
        quadratic(2, 1.0).unwrap(),
        Algorithm::Momentum {
            policy: PolicyKind::RmspropAdam,
            clipping: ClipMode::UpperOnly,
        },
    )
    .with_max_iter(10_000))
    .unwrap();
    let sb = t.bounds.clone().unwrap();
    let r = check_prop_no_lower_bound(&t, &t.config.hp, &sb, t.h0(), t.config.objective.infimum).unwrap();
    outcome(
        r.all_hold && r.rows.len() == 10_000,
        format!("{} violations, worst lhs/bound {:.2e}", r.violations, r.worst_ratio),
    )
}

fn stochastic_trials(sigma: f64, trials: u64, n: usize) -> Vec<Trace> {
    (0..trials)
        .into_par_iter()
        .map(|seed| {
            run(&RunConfig::new(quadratic(2, 1.0).unwrap(), Algorithm::clipped_adam())
                .with_noise(Noise::Stochastic { sigma, seed })
                .with_max_iter(n)
                .with_vectors(false))
            .unwrap()
        })
        .collect()
}

fn stochastic_bound() -> Outcome {
    let start = Instant::now();
    let traces = stochastic_trials(0.1, 100, 500);
    let first = &traces[0];
    let sb = first.bounds.clone().unwrap();
    let hp = &first.config.hp;
    let r = check_theorem2(&traces, &sb, hp, first.h0(), 0.0, 0.1).unwrap();
    let margin = r.bound / r.mean;

    let quiet = stochastic_trials(0.0, 2, 500);
    let q0 = &quiet[0];
    let r0 = check_theorem2(&quiet, &sb, hp, q0.h0(), 0.0, 0.0).unwrap();
    let det = theorem1_bound(500, hp.momentum, sb.delta, hp.theorem_margin, q0.h0(), 0.0, q0.records[0].p_sq_norm);
    let elapsed = start.elapsed();
    outcome(
        r.holds && margin >= 10.0 && r0.bound == det && within(elapsed, 30.0),
        format!(
            "mean {:.3e} ± {:.1e} ≤ bound {:.3e} (margin {:.0}×); σ=0 bound equals deterministic: {}; {:.2?}",
            r.mean,
            r.std_error,
            r.bound,
            margin,
            r0.bound == det,
            elapsed
        ),
    )
}

fn rate_regimes() -> Outcome {
    let start = Instant::now();
    let opts = Figure1Options {
        algorithms: vec![Figure1Algorithm::ClippedAdam],
        ..Figure1Options::default()
    };
    let cells = figure1_experiment(&opts).unwrap();
    let elapsed = start.elapsed();
    let mut ok = within(elapsed, 10.0);
    let mut details = Vec::new();
    for c in &cells {
        let cl = &c.classification;
        let good = if c.p < 2.0 {
            matches!(cl.regime, Regime::Finite | Regime::Linear)
        } else if c.p == 2.0 {
            cl.regime == Regime::Linear && cl.fit_quality.is_some_and(|q| q >= 0.99)
        } else {
            let theory = c.p / (2.0 - c.p);
            cl.regime == Regime::Sublinear && cl.fitted_slope.is_some_and(|s| (s - theory).abs() <= 0.4)
        };
        ok &= good;
        let fit = cl
            .fitted_slope
            .map(|s| format!(" slope {s:.2}"))
            .or(cl.fit_quality.map(|q| format!(" R² {q:.4}")))
            .unwrap_or_default();
        details.push(format!("p={} {}{}", c.p, cl.regime, fit));
    }
    outcome(ok, format!("{} in {:.2?}", details.join(", "), elapsed))
}

fn exact_rate() -> Outcome {
    let gamma = 0.25;
    let m = monomial(2.0).unwrap();
    let t = run(&RunConfig::new(m, Algorithm::GradientDescent { step: gamma })
        .with_x0(Vector::filled(1, 1.0))
        .with_max_iter(100))
    .unwrap();
    let c = classify_rate(&t, 0.0, Some(0.5));
    let want = (1.0 - 2.0 * gamma).powi(2);
    let got = c.fitted_q.unwrap_or(f64::NAN);
    outcome(
        c.regime == Regime::Linear && (got - want).abs() <= 1e-6,
        format!("fitted q {got:.10} vs {want}"),
    )
}

fn abstract_conditions() -> Outcome {
    let mut runs = standard_runs();
    let constant = HyperParams {
        base_rate: 0.01,
        momentum: 0.5,
        ..HyperParams::default()
    };
    for policy in [PolicyKind::Constant, PolicyKind::Adagrad] {
        runs.push(
            run(&RunConfig::new(rosenbrock(2).unwrap(), Algorithm::Momentum { policy, clipping: ClipMode::Full })
                .with_hp(constant.clone())
                .with_max_iter(5000))
            .unwrap(),
        );
    }
    let mut ok = true;
    let mut details = Vec::new();
    for t in &runs {
        let sb = t.bounds.clone().unwrap();
        let r = check_abstract_conditions(t, &t.config.hp, &sb, t.config.objective.lipschitz);
        ok &= r.holds();
        details.push(format!(
            "{}: {}+{} violations",
            t.config.objective.id, r.decrease_violations, r.gradient_violations
        ));
    }
    outcome(ok, details.join(", "))
}

fn equivalences() -> Outcome {
    // No momentum, constant step: exactly gradient descent.
    let obj = rosenbrock(2).unwrap();
    let gamma = 1e-3;
    let hp = HyperParams {
        base_rate: gamma,
        momentum: 1.0,
        ..HyperParams::default()
    };
    let alg1 = run(&RunConfig::new(
        obj.clone(),
        Algorithm::Momentum {
            policy: PolicyKind::Constant,
            clipping: ClipMode::Off,
        },
    )
    .with_hp(hp)
    .with_max_iter(1000))
    .unwrap();
    let gd = run(&RunConfig::new(obj, Algorithm::GradientDescent { step: gamma }).with_max_iter(1000)).unwrap();
    let xs = |t: &Trace| t.snapshots.as_ref().unwrap().iter().map(|s| s.x.clone()).collect::<Vec<_>>();
    let bit_exact = alg1.records.len() == 1001 && xs(&alg1) == xs(&gd);

    // Heavy-ball rewrite with αₙ = b aₙ₊₁ and βₙ = (1−b) aₙ₊₁/aₙ, driven by
    // its own gradients.
    let q = quadratic(2, 1.0).unwrap();
    let t = clipped_adam_run(q.clone(), 100);
    let b = t.config.hp.momentum;
    let snaps = t.snapshots.as_ref().unwrap();
    let mut x_prev = snaps[0].x.clone();
    let mut x = snaps[0].x.clone();
    let mut worst: f64 = 0.0;
    for n in 0..100 {
        let (a, a_next) = (&snaps[n].a, &snaps[n + 1].a);
        let alpha = a_next.scale(b).unwrap();
        let beta = a_next.zip_map(a, |an, a| (1.0 - b) * an / a).unwrap();
        let next = step_heavy_ball_coordinatewise(&x, &x_prev, &alpha, &beta, &q.grad(&x).unwrap()).unwrap();
        worst = worst.max(next.sub(&snaps[n + 1].x).unwrap().norm());
        x_prev = std::mem::replace(&mut x, next);
    }
    outcome(
        bit_exact && worst <= 1e-10,
        format!("gradient descent bit-exact over 1000 steps: {bit_exact}; heavy-ball max deviation {worst:.1e}"),
    )
}

fn gradient_oracles() -> Outcome {
    let mut objectives = vec![
        quadratic(2, 1.0).unwrap(),
        quadratic(5, 3.0).unwrap(),
        rosenbrock(2).unwrap(),
        rosenbrock(4).unwrap(),
    ];
    for p in [1.0, 1.3, 1.5, 2.0, 3.0, 4.0, 6.0] {
        objectives.push(monomial(p).unwrap());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut worst_id = String::new();
    for obj in &objectives {
        for _ in 0..100 {
            let x = obj.sample_domain(&mut rng);
            let g = obj.grad(&x).unwrap();
            let fd = finite_diff_grad(obj, &x, 1e-6).unwrap();
            let rel = g.sub(&fd).unwrap().norm() / g.norm().max(1e-8);
            if rel > worst {
                worst = rel;
                worst_id = obj.id.clone();
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("{} objectives × 100 points, worst relative error {worst:.2e} ({worst_id})", objectives.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("Lyapunov function nonincreasing", lyapunov_monotonicity),
        ("clipped rate bound", rate_bound),
        ("per-step descent inequality", descent_lemma),
        ("safe bound closed form without momentum", safe_bound_closed_form),
        ("gradient-descent baseline bound", gd_bound),
        ("upper-clip-only step-weighted bound", upper_clip_bound),
        ("stochastic expected-gradient bound", stochastic_bound),
        ("rate regimes on |x|^p", rate_regimes),
        ("exact geometric rate oracle", exact_rate),
        ("sufficient decrease and relative error", abstract_conditions),
        ("gradient-descent and heavy-ball equivalence", equivalences),
        ("analytic gradients vs finite differences", gradient_oracles),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {}: {}",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
