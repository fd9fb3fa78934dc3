use bounded_adam::engine::{run, Algorithm, RunConfig};
use bounded_adam::klrates::{
    classify_rate, classify_rate_with_window, figure1_experiment, Figure1Algorithm, Figure1Options, Regime,
};
use bounded_adam::objectives::{monomial, quadratic};
use bounded_adam::Vector;

#[test]
fn gd_on_quadratic_has_exact_contraction() {
    for (lam, gamma) in [(1.0, 0.3), (2.0, 0.2), (0.5, 1.0)] {
        let t = run(&RunConfig::new(quadratic(1, lam).unwrap(), Algorithm::GradientDescent { step: gamma })
            .with_max_iter(200))
        .unwrap();
        let c = classify_rate(&t, 0.0, Some(0.5));
        let want = (1.0 - gamma * lam) * (1.0 - gamma * lam);
        assert_eq!(c.regime, Regime::Linear);
        assert!((c.fitted_q.unwrap() - want).abs() < 1e-6, "{c:?}");
    }
}

#[test]
fn power_laws_match_theory_and_survive_window_changes() {
    let opts = Figure1Options {
        p_values: vec![3.0, 4.0, 5.0, 6.0],
        algorithms: vec![Figure1Algorithm::ClippedAdam, Figure1Algorithm::Gd],
        ..Figure1Options::default()
    };
    for cell in figure1_experiment(&opts).unwrap() {
        let c = &cell.classification;
        let theory = c.theory_slope.unwrap();
        assert_eq!(c.regime, Regime::Sublinear, "{} {}", cell.p, cell.algorithm);
        assert!((c.fitted_slope.unwrap() - theory).abs() <= 0.4, "{} {} {c:?}", cell.p, cell.algorithm);
        let f_star = cell.trace.config.objective.infimum;
        for frac in [0.45, 0.55] {
            let alt = classify_rate_with_window(&cell.trace, f_star, Some(1.0 / cell.p), frac);
            assert_eq!(alt.regime, c.regime);
        }
    }
}

#[test]
fn square_and_sharp_regimes_survive_window_changes() {
    let t = run(&RunConfig::new(monomial(2.0).unwrap(), Algorithm::clipped_adam())
        .with_x0(Vector::filled(1, 1.0))
        .with_max_iter(20_000)
        .with_vectors(false))
    .unwrap();
    for frac in [0.45, 0.5, 0.55] {
        assert_eq!(classify_rate_with_window(&t, 0.0, Some(0.5), frac).regime, Regime::Linear);
    }
    let sharp = run(&RunConfig::new(monomial(1.0).unwrap(), Algorithm::clipped_adam()).with_max_iter(20_000)).unwrap();
    assert_eq!(classify_rate(&sharp, 0.0, Some(1.0)).regime, Regime::Finite);
}

#[test]
fn full_grid_has_21_cells() {
    let opts = Figure1Options {
        max_iter: 2000,
        ..Figure1Options::default()
    };
    let cells = figure1_experiment(&opts).unwrap();
    assert_eq!(cells.len(), 21);
    assert!(cells.iter().all(|c| c.divergence.is_none()));
}

#[test]
fn out_of_range_exponent_is_rejected() {
    let opts = Figure1Options {
        p_values: vec![0.5],
        ..Figure1Options::default()
    };
    assert!(figure1_experiment(&opts).is_err());
}
