use bounded_adam::objectives::{monomial, quadratic, rosenbrock, Objective};
use bounded_adam::Vector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn builtins() -> Vec<Objective> {
    let mut out = vec![
        quadratic(1, 1.0).unwrap(),
        quadratic(3, 0.5).unwrap(),
        quadratic(10, 4.0).unwrap(),
        rosenbrock(2).unwrap(),
        rosenbrock(6).unwrap(),
    ];
    for p in [1.0, 1.3, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0] {
        out.push(monomial(p).unwrap());
    }
    out
}

#[test]
fn gradient_is_lipschitz_on_sampled_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for obj in builtins() {
        for _ in 0..100 {
            let x = obj.sample_domain(&mut rng);
            let y = obj.sample_domain(&mut rng);
            let lhs = obj.grad(&x).unwrap().sub(&obj.grad(&y).unwrap()).unwrap().norm();
            let rhs = obj.lipschitz * x.sub(&y).unwrap().norm();
            assert!(lhs <= rhs, "{}: {lhs} > {rhs} at {x:?}, {y:?}", obj.id);
        }
    }
}

#[test]
fn sampled_points_have_finite_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for obj in builtins() {
        for _ in 0..20 {
            let x = obj.sample_domain(&mut rng);
            assert_eq!(x.len(), obj.dim);
            assert!(obj.value(&x).unwrap() >= obj.infimum);
        }
    }
}

proptest! {
    #[test]
    fn monomial_is_even_with_odd_gradient(p in 1.0f64..7.0, x in -3.0f64..3.0) {
        let m = monomial(p).unwrap();
        let pos = Vector::new(vec![x]).unwrap();
        let neg = Vector::new(vec![-x]).unwrap();
        prop_assert_eq!(m.value(&pos).unwrap(), m.value(&neg).unwrap());
        prop_assert_eq!(m.grad(&pos).unwrap()[0], -m.grad(&neg).unwrap()[0]);
    }

    #[test]
    fn quadratic_gradient_is_linear(lam in 0.1f64..10.0, c in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
        let q = quadratic(c.len(), lam).unwrap();
        let x = Vector::new(c.clone()).unwrap();
        let g = q.grad(&x).unwrap();
        for (gi, xi) in g.iter().zip(&c) {
            prop_assert_eq!(*gi, lam * xi);
        }
    }
}
