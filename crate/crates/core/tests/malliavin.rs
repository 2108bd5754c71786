use hypocert::dynamics::{PhaseState, SimConfig};
use hypocert::malliavin::{
    alpha_reference_bound, commutator_direction, coupling_distances, coupling_probability, flow_identity_residual,
    gaussian_part_cov, gaussian_part_pair_cov, validate_gaussian_approx, AlphaConsts,
};
use hypocert::potentials::{make_bump_double_well, make_quadratic};
use nalgebra::{Matrix2, SymmetricEigen};
use proptest::prelude::*;

/// Simpson's rule for `σ² ∫_0^t g(u) gᵀ(u) du` with `g(u) = (u, 1 - u)`.
fn pair_cov_oracle(t: f64, sigma: f64) -> [f64; 4] {
    let n = 2000;
    let h = t / n as f64;
    let mut acc = [0.0; 4];
    for i in 0..=n {
        let u = i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let g = [u, 1.0 - u];
        for r in 0..2 {
            for c in 0..2 {
                acc[r * 2 + c] += w * g[r] * g[c];
            }
        }
    }
    acc.map(|a| sigma * sigma * a * h / 3.0)
}

#[test]
fn commutator_direction_at_origin() {
    let p = make_quadratic(1).unwrap();
    assert_eq!(commutator_direction(&p, &PhaseState::zeros(1)), vec![1.0, -1.0]);
}

#[test]
fn commutator_direction_independent_of_state() {
    let p = make_quadratic(1).unwrap();
    assert_eq!(commutator_direction(&p, &PhaseState::new_1d(5.0, -3.0).unwrap()), vec![1.0, -1.0]);
}

#[test]
fn commutator_and_noise_span_the_plane() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let c = commutator_direction(&p, &PhaseState::new_1d(0.7, 0.2).unwrap());
    // columns (A₁, [A₁, B]) with A₁ = (0, 1)
    let det = 0.0 * c[1] - 1.0 * c[0];
    assert_eq!(det, -1.0);
}

#[test]
fn gaussian_part_covariance_at_tenth() {
    let got = gaussian_part_pair_cov(0.1, 1.0).unwrap();
    let want = pair_cov_oracle(0.1, 1.0);
    for k in 0..4 {
        assert!((got[k] - want[k]).abs() < 1e-12, "{got:?} vs {want:?}");
    }
    assert!((got[0] - 1.0 / 3000.0).abs() < 1e-15);
    assert!((got[1] - 7.0 / 1500.0).abs() < 1e-15);
    assert!((got[3] - 271.0 / 3000.0).abs() < 1e-15);
}

#[test]
fn gaussian_part_covariance_positive_definite() {
    for i in 1..=100 {
        let t = i as f64 / 100.0;
        let c = gaussian_part_pair_cov(t, 1.0).unwrap();
        assert!(c[0] * c[3] - c[1] * c[2] > 0.0, "t = {t}");
    }
}

#[test]
fn gaussian_part_eigenvalues_scale() {
    for t in [0.05, 0.1, 0.2] {
        let c = gaussian_part_cov(t, 1.0, 1).unwrap();
        let e = SymmetricEigen::new(Matrix2::new(c[0], c[1], c[2], c[3]));
        let (lo, hi) = (e.eigenvalues.min(), e.eigenvalues.max());
        assert!((lo / (t.powi(3) / 12.0) - 1.0).abs() < 2.0 * t, "t = {t}: {lo}");
        assert!((hi / t - 1.0).abs() < 2.0 * t, "t = {t}: {hi}");
    }
}

#[test]
fn covariance_deviation_small_at_short_time() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 1_000_000, dt: 1e-3, ..SimConfig::default() };
    let rep = validate_gaussian_approx(&p, &PhaseState::new_1d(0.5, -0.5).unwrap(), &[0.05], &cfg).unwrap();
    let r = &rep.rows[0];
    assert!(r.dev_norm < 10.0 * r.predicted, "{} vs {}", r.dev_norm, r.predicted);
}

#[test]
fn approximation_mean_follows_linear_flow() {
    let p = make_quadratic(1).unwrap();
    let z0 = [1.0, 0.5];
    let t = 0.2;
    let cfg = SimConfig { n_paths: 200_000, dt: 1e-4, ..SimConfig::default() };
    let rep = validate_gaussian_approx(&p, &PhaseState::from_slice(&z0).unwrap(), &[t], &cfg).unwrap();
    let w = 3f64.sqrt() / 2.0;
    let (c, s, e) = ((w * t).cos(), (w * t).sin() / w, (-t / 2.0).exp());
    let want = [e * (c + 0.5 * s) * z0[0] + e * s * z0[1], -e * s * z0[0] + e * (c - 0.5 * s) * z0[1]];
    let a = &rep.rows[0].approx;
    for k in 0..2 {
        assert!((a.mean[k] - want[k]).abs() < 3.0 * a.mean_se[k] + 1e-4, "{k}: {} vs {}", a.mean[k], want[k]);
    }
}

#[test]
fn short_time_approximation_rejects_long_times() {
    let p = make_quadratic(1).unwrap();
    assert!(validate_gaussian_approx(&p, &PhaseState::zeros(1), &[0.8], &SimConfig::default()).is_err());
}

#[test]
fn coupling_from_same_point() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 100_000, ..SimConfig::default() };
    let z = PhaseState::zeros(1);
    let est = coupling_probability(&p, &z, &z, 0.1, 0.5, &cfg, None).unwrap();
    assert!(est.euclidean.p_hat < 1.0 && est.euclidean.lo > 0.0);
}

#[test]
fn coupling_positive_across_radius() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 100_000, ..SimConfig::default() };
    let est = coupling_probability(
        &p,
        &PhaseState::new_1d(1.0, 0.0).unwrap(),
        &PhaseState::new_1d(-1.0, 0.0).unwrap(),
        1.0,
        0.5,
        &cfg,
        None,
    )
    .unwrap();
    assert!(est.euclidean.lo > 0.0, "{est:?}");
    assert!(!est.inconclusive);
}

#[test]
fn reference_bound_vanishes_for_short_times() {
    let k = AlphaConsts { c: 1.0, k: 1.0, m: 1.0 };
    for t in [1e-2, 1e-3] {
        assert_eq!(alpha_reference_bound(t, 0.5, 2.0, k).unwrap(), 0.0);
    }
}

#[test]
fn reference_bound_below_monte_carlo() {
    let consts = AlphaConsts { c: 0.05, k: 1.0, m: 0.2 };
    let (t, delta) = (0.5, 0.5);
    let bound = alpha_reference_bound(t, delta, 2.0, consts).unwrap();
    assert!(bound > 0.0);
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 50_000, ..SimConfig::default() };
    let z = PhaseState::new_1d(0.1, 0.0).unwrap();
    let est = coupling_probability(&p, &z, &z, t, delta, &cfg, None).unwrap();
    assert!(est.euclidean.lo > bound, "{} vs {bound}", est.euclidean.lo);
}

#[test]
fn reference_bound_first_term_grows_with_delta() {
    let consts = AlphaConsts { c: 0.05, k: 1.0, m: 0.2 };
    let a = alpha_reference_bound(0.5, 0.4, 2.0, consts).unwrap();
    let b = alpha_reference_bound(0.5, 0.6, 2.0, consts).unwrap();
    assert!(a < b);
}

#[test]
fn flow_composes_along_paths() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let cfg = SimConfig { n_paths: 64, dt: 1e-2, ..SimConfig::default() };
    let r = flow_identity_residual(&p, &PhaseState::new_1d(0.3, -0.4).unwrap(), 0.4, 1.0, &cfg).unwrap();
    assert!(r < 1e-10, "{r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn coupling_estimate_monotone_in_delta(d1 in 0.05f64..2.0, d2 in 0.05f64..2.0) {
        let p = make_quadratic(1).unwrap();
        let cfg = SimConfig { n_paths: 2_000, ..SimConfig::default() };
        let s = coupling_distances(
            &p,
            &PhaseState::new_1d(1.0, 0.0).unwrap(),
            &PhaseState::new_1d(-1.0, 0.0).unwrap(),
            1.0,
            &cfg,
            None,
        )
        .unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(s.estimate(lo).unwrap().euclidean.p_hat <= s.estimate(hi).unwrap().euclidean.p_hat);
    }
}
