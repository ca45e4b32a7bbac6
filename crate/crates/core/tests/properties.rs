use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use regula_core::hilbert::ABS_FLOOR;
use regula_core::{
    build_operator, convex_combination, identity_defect_convex, identity_defect_sum, inner, phi, phi_krasnoselskii,
    run_mann, strictness_defect, theta_constant, DivergenceRate, OperatorSpec, RateSource, ScheduleSpec, StepSchedule,
    Vector,
};

fn vec_of(dim: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    dim.prop_flat_map(|d| prop::collection::vec(-100.0f64..100.0, d))
}

fn pair() -> impl Strategy<Value = (Vector, Vector)> {
    (1usize..=64).prop_flat_map(|d| {
        (prop::collection::vec(-100.0f64..100.0, d), prop::collection::vec(-100.0f64..100.0, d))
            .prop_map(|(x, y)| (Vector::new(x).unwrap(), Vector::new(y).unwrap()))
    })
}

proptest! {
    #[test]
    fn norm_identities_hold((x, y) in pair(), t in 0.0f64..=1.0) {
        let scale = 1.0 + x.norm_sq() + y.norm_sq();
        prop_assert!(identity_defect_sum(&x, &y).unwrap().abs() <= 1e-10 * scale);
        prop_assert!(identity_defect_convex(t, &x, &y).unwrap().abs() <= 1e-10 * scale);
    }

    #[test]
    fn cauchy_schwarz((x, y) in pair()) {
        let ip = inner(&x, &y).unwrap();
        prop_assert!(ip.abs() <= x.norm() * y.norm() * (1.0 + 1e-12) + ABS_FLOOR);
    }

    #[test]
    fn convex_combination_lies_between((x, y) in pair(), t in 0.0f64..=1.0) {
        let z = convex_combination(t, &x, &y).unwrap();
        let d = x.dist(&y);
        prop_assert!((z.dist(&x) + z.dist(&y) - d).abs() <= 1e-10 * (1.0 + d));
    }

    #[test]
    fn scaling_is_strict_with_its_kappa(a in -6.0f64..=1.0, x in vec_of(3..=3), y in vec_of(3..=3)) {
        let op = build_operator(&OperatorSpec::Scaling { a, dim: 3 }).unwrap();
        let (x, y) = (Vector::new(x).unwrap(), Vector::new(y).unwrap());
        let d = strictness_defect(&op, op.kappa(), &x, &y).unwrap();
        prop_assert!(d <= 1e-9 * (1.0 + x.norm_sq() + y.norm_sq()));
    }

    #[test]
    fn compute_theta_is_minimal(
        prefix in prop::collection::vec(0.05f64..0.95, 0..20),
        tail in 0.05f64..0.95,
        kappa in 0.0f64..0.04,
        n in 0u64..200,
    ) {
        let spec = ScheduleSpec::Table { prefix, tail: Box::new(ScheduleSpec::Constant { lambda: tail }) };
        let s = StepSchedule::new(spec, kappa).unwrap();
        let m = s.compute_theta(n).unwrap();
        let partial = |k: u64| (0..=k).map(|j| s.weight_at(j).unwrap()).sum::<f64>();
        prop_assert!(partial(m) >= n as f64);
        if m > 0 {
            prop_assert!(partial(m - 1) < n as f64);
        }
        prop_assert!(s.compute_theta(n + 1).unwrap() >= m);
    }

    #[test]
    fn phi_monotone_in_eps_and_b(eps in 0.01f64..1.0, b in 0.1f64..10.0, c in 1u64..50) {
        let rate = DivergenceRate::linear(c, RateSource::Explicit);
        let base = phi(eps, b, &rate).unwrap();
        prop_assert!(phi(eps / 2.0, b, &rate).unwrap() >= base);
        prop_assert!(phi(eps, 2.0 * b, &rate).unwrap() >= base);
    }

    #[test]
    fn constant_step_rate_agrees_with_general_form(
        kappa in 0.0f64..0.9,
        frac in 0.01f64..0.99,
        eps in 0.01f64..1.0,
        b in 0.1f64..5.0,
    ) {
        let lambda = kappa + frac * (1.0 - kappa);
        prop_assume!(lambda > kappa && lambda < 1.0);
        let general = phi(eps, b, &theta_constant(lambda, kappa).unwrap()).unwrap();
        prop_assert_eq!(phi_krasnoselskii(eps, b, lambda, kappa).unwrap(), general);
    }
}

#[test]
fn rotation_residual_matches_closed_form() {
    let op = build_operator(&OperatorSpec::Rotation { angle: FRAC_PI_2, plane: [0, 1], dim: 2 }).unwrap();
    let s = StepSchedule::constant(0.5, 0.0).unwrap();
    let x0 = Vector::new(vec![0.3, -1.7]).unwrap();
    let t = run_mann(&op, &s, &x0, 50).unwrap();
    for (n, r) in t.residuals().iter().enumerate() {
        let expect = 2f64.sqrt() * (0.5f64.sqrt()).powi(n as i32) * x0.norm();
        assert!((r - expect).abs() <= 1e-10, "n={n}: {r} vs {expect}");
    }
}
