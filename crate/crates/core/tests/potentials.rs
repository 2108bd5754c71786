use hypocert::potentials::{check_hypotheses, make_bump_double_well, make_quadratic};
use proptest::prelude::*;

#[test]
fn quadratic_minimum_at_origin() {
    let p = make_quadratic(1).unwrap();
    assert_eq!(p.value(&[0.0]), 0.0);
    assert_eq!(p.grad_vec(&[0.0]), vec![0.0]);
}

#[test]
fn quadratic_growth_condition_is_tight_at_two() {
    let p = make_quadratic(1).unwrap();
    let x = 2.0;
    assert_eq!(p.value(&[x]), 2.0);
    let lhs = x * p.grad_vec(&[x])[0];
    assert_eq!(lhs, 4.0);
    assert_eq!(lhs, p.c1 * p.value(&[x]) + p.c2 * x * x - p.c3);
}

#[test]
fn quadratic_three_dimensional_identity_hessian() {
    let p = make_quadratic(3).unwrap();
    assert_eq!(p.value(&[1.0, 1.0, 1.0]), 1.5);
    let h = p.hess_vec(&[1.0, 1.0, 1.0]);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(h[i * 3 + j], if i == j { 1.0 } else { 0.0 });
        }
    }
    assert_eq!(p.hess_bound, 1.0);
}

#[test]
fn flat_bump_reduces_to_quadratic() {
    let p = make_bump_double_well(0.0, 1.0).unwrap();
    assert!((p.hess_bound - 1.0).abs() < 1e-9);
    for x in [-3.0, -0.5, 0.0, 1.7] {
        assert!((p.value(&[x]) - 0.5 * x * x).abs() < 1e-12);
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(a).signum() == f(m).signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn bump_wells_are_roots_of_the_derivative() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let root = bisect(|x| x * (1.0 - 2.0 * (-x * x / 2.0).exp()), 0.5, 3.0);
    assert!(root > 0.0);
    assert!((p.minimizer[0] - root).abs() < 1e-10);
    for x in [root, -root] {
        assert!(p.grad_vec(&[x])[0].abs() < 1e-10);
        assert!(p.value(&[x]).abs() < 1e-12);
        assert!(p.hess_vec(&[x])[0] > 0.0);
    }
}

#[test]
fn bump_hessian_bound_matches_dense_grid() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let upp = |x: f64| 1.0 + 2.0 * (-x * x / 2.0).exp() * (x * x - 1.0);
    let n = 2_000_001;
    let grid_max = (0..n).map(|i| upp(-10.0 + 20.0 * i as f64 / (n - 1) as f64)).fold(f64::MIN, f64::max);
    assert!(grid_max.is_finite());
    assert!((p.hess_bound - grid_max).abs() < 1e-9, "{} vs {grid_max}", p.hess_bound);
}

#[test]
fn hypotheses_hold_for_quadratic() {
    let p = make_quadratic(1).unwrap();
    let r = check_hypotheses(&p, 10.0, 201).unwrap();
    assert!(r.pass());
    assert!(r.drift_margin >= 0.0 && r.hess_margin >= 0.0);
}

#[test]
fn hypotheses_hold_for_bump() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let r = check_hypotheses(&p, 20.0, 4001).unwrap();
    assert!(r.pass(), "{r:?}");
}

#[test]
fn negative_c3_is_rejected() {
    let p = make_quadratic(1).unwrap();
    assert!(p.with_constants(1.0, 1.0, 0.5, -1.0).is_err());
}

#[test]
fn understated_hessian_bound_fails_hypotheses() {
    let p = make_bump_double_well(2.0, 1.0).unwrap().with_constants(1.0, 1.0, 0.5, 5.0).unwrap();
    assert!(!check_hypotheses(&p, 5.0, 2001).unwrap().hess_pass);
}

proptest! {
    #[test]
    fn bump_gradient_matches_central_difference(x in -6.0f64..6.0, a in 0.0f64..4.0, w in 0.5f64..2.0) {
        let p = make_bump_double_well(a, w).unwrap();
        let h = 1e-5;
        let fd = (p.value(&[x + h]) - p.value(&[x - h])) / (2.0 * h);
        prop_assert!((p.grad_vec(&[x])[0] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        let fd2 = (p.grad_vec(&[x + h])[0] - p.grad_vec(&[x - h])[0]) / (2.0 * h);
        prop_assert!((p.hess_vec(&[x])[0] - fd2).abs() < 1e-5 * (1.0 + fd2.abs()));
    }

    #[test]
    fn bump_is_nonnegative_and_respects_constants(x in -30.0f64..30.0) {
        let p = make_bump_double_well(2.0, 1.0).unwrap();
        let u = p.value(&[x]);
        prop_assert!(u >= -1e-12);
        prop_assert!(p.hess_vec(&[x])[0] <= p.hess_bound + 1e-12);
        let g = p.grad_vec(&[x])[0];
        prop_assert!(x * g >= p.c1 * u + p.c2 * x * x - p.c3 - 1e-9);
    }
}
