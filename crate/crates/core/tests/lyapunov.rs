use hypocert::dynamics::{PhaseState, SimConfig};
use hypocert::lyapunov::{
    derive_params, drift_samples, kappa_check, ln_weight_slice, q_form, q_form_slice, square_grid, verify_drift,
    weight_l, SlackForm,
};
use hypocert::potentials::{make_bump_double_well, make_quadratic, PotentialSpec};
use nalgebra::{Matrix2, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, scale: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [scale * (rng.random::<f64>() * 2.0 - 1.0), scale * (rng.random::<f64>() * 2.0 - 1.0)]).collect()
}

/// `min over x in (0, 50] of (x U'(x) + c3) / (2(x^2 + c1 U(x)))`, capped at 1/2.
fn beta_oracle(p: &PotentialSpec) -> f64 {
    let mut best: f64 = 0.5;
    for i in 1..=500_000 {
        for s in [1.0, -1.0] {
            let x = s * 50.0 * i as f64 / 500_000.0;
            let den = 2.0 * (x * x + p.c1 * p.value(&[x]));
            best = best.min((x * p.grad_vec(&[x])[0] + p.c3) / den);
        }
    }
    best
}

#[test]
fn q_vanishes_at_origin() {
    let p = make_quadratic(1).unwrap();
    assert_eq!(q_form(&PhaseState::zeros(1), &p), 0.0);
}

#[test]
fn q_at_unit_position() {
    let p = make_quadratic(1).unwrap();
    assert_eq!(q_form(&PhaseState::new_1d(1.0, 0.0).unwrap(), &p), 1.5);
}

fn q_eigenvalues() -> (f64, f64, nalgebra::Vector2<f64>) {
    // Q = 1.5 x^2 + x v + v^2 for the quadratic potential
    let e = SymmetricEigen::new(Matrix2::new(1.5, 0.5, 0.5, 1.0));
    let (i_min, i_max) = if e.eigenvalues[0] < e.eigenvalues[1] { (0, 1) } else { (1, 0) };
    (e.eigenvalues[i_min], e.eigenvalues[i_max], e.eigenvectors.column(i_min).into())
}

#[test]
fn q_sandwich_at_random_points() {
    let p = make_quadratic(1).unwrap();
    let (lo, hi, _) = q_eigenvalues();
    assert!(hi <= 2.0 + p.hess_bound);
    for z in random_points(1000, 10.0, 1) {
        let n2 = z[0] * z[0] + z[1] * z[1];
        let q = q_form_slice(&z, &p);
        assert!(lo * n2 <= q * (1.0 + 1e-12) && q <= hi * n2 * (1.0 + 1e-12));
        assert!(q <= (2.0 + p.hess_bound) * n2);
    }
}

#[test]
fn q_lower_constant_three_quarters_is_not_valid() {
    let p = make_quadratic(1).unwrap();
    let (lo, _, dir) = q_eigenvalues();
    assert!(lo < 0.75);
    let q = q_form_slice(&[dir[0], dir[1]], &p);
    assert!(q < 0.75 * (dir[0] * dir[0] + dir[1] * dir[1]));
}

#[test]
fn weight_is_one_at_origin() {
    let p = make_quadratic(1).unwrap();
    let lp = derive_params(&p).unwrap();
    assert_eq!(weight_l(&PhaseState::zeros(1), &p, &lp, 1.0).unwrap().value, 1.0);
}

#[test]
fn weight_is_monotone_in_exponent() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let lp = derive_params(&p).unwrap();
    for z in random_points(200, 8.0, 2) {
        let s = PhaseState::from_slice(&z).unwrap();
        let a = weight_l(&s, &p, &lp, 0.3).unwrap().value;
        let b = weight_l(&s, &p, &lp, 0.9).unwrap().value;
        assert!(1.0 <= a && a <= b);
    }
}

#[test]
fn weight_within_radial_envelopes() {
    for p in [make_quadratic(1).unwrap(), make_bump_double_well(2.0, 1.0).unwrap()] {
        let lp = derive_params(&p).unwrap();
        for z in random_points(1000, 15.0, 3) {
            let s = (z[0] * z[0] + z[1] * z[1]).sqrt();
            let ln_l = ln_weight_slice(&z, &p, &lp);
            assert!(lp.ln_lower(s) <= ln_l + 1e-12, "{} at {z:?}", p.name);
            assert!(ln_l <= lp.ln_upper(s) + 1e-12, "{} at {z:?}", p.name);
        }
    }
}

#[test]
fn quadratic_exponent_chain() {
    let p = make_quadratic(1).unwrap();
    let lp = derive_params(&p).unwrap();
    let beta = beta_oracle(&p);
    assert!((beta - 1.0 / 3.0).abs() < 1e-9);
    assert!((lp.beta - beta).abs() < 1e-9);
    assert_eq!(lp.k, 1.0);
    assert!((lp.a_star - 3.0 * beta / 1024.0).abs() < 1e-15);
    assert!((lp.a_upper - beta * p.c1 / 32.0).abs() < 1e-15);
}

#[test]
fn bump_rate_matches_grid_oracle() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let lp = derive_params(&p).unwrap();
    let beta = beta_oracle(&p);
    assert!(beta > 0.0);
    assert!((lp.beta - beta).abs() < 1e-6, "{} vs {beta}", lp.beta);
}

#[test]
fn kappa_envelope_holds_with_reciprocal_exponent() {
    for p in [make_quadratic(1).unwrap(), make_bump_double_well(2.0, 1.0).unwrap()] {
        let lp = derive_params(&p).unwrap();
        assert!(kappa_check(&lp, 1.0 / lp.a_star, 20.0, 1e-3) <= 0.0);
        assert!(kappa_check(&lp, lp.c_kappa, 20.0, 1e-3) <= 1e-12);
    }
}

#[test]
fn drift_holds_at_origin() {
    let p = make_quadratic(1).unwrap();
    let lp = derive_params(&p).unwrap();
    let cfg = SimConfig { n_paths: 100_000, ..SimConfig::default() };
    let rep = verify_drift(&p, &lp, 1.0, &[PhaseState::zeros(1)], &cfg).unwrap();
    let row = &rep.rows[0];
    assert!(row.lhs.mean.is_finite());
    assert_eq!(row.rhs, 1.0);
    assert!(rep.pass);
}

#[test]
fn drift_passing_at_a_passes_at_half_a() {
    let p = make_quadratic(1).unwrap();
    let lp = derive_params(&p).unwrap();
    let cfg = SimConfig { n_paths: 20_000, ..SimConfig::default() };
    let s = drift_samples(&p, &[0.5, 1.0], &square_grid(1, 2.0, 3), &cfg).unwrap();
    let full = s.evaluate(&lp, lp.a_star, cfg.sigma, 1).unwrap();
    let half = s.evaluate(&lp, lp.a_star / 2.0, cfg.sigma, 1).unwrap();
    assert!(full.form_passed.is_some());
    assert!(half.form_passed.is_some());
    assert!(half.form_passed <= full.form_passed);
    assert!(half.slack(SlackForm::ConstantCa) <= full.slack(SlackForm::ConstantCa));
}

proptest! {
    #[test]
    fn log_weight_is_linear_in_exponent(x in -10.0f64..10.0, v in -10.0f64..10.0, r in 0.01f64..2.0) {
        let p = make_bump_double_well(2.0, 1.0).unwrap();
        let lp = derive_params(&p).unwrap();
        let z = PhaseState::new_1d(x, v).unwrap();
        let w = weight_l(&z, &p, &lp, r).unwrap();
        prop_assert!((w.ln_value - r * ln_weight_slice(&[x, v], &p, &lp)).abs() <= 1e-12 * (1.0 + w.ln_value.abs()));
        prop_assert!(w.value >= 1.0);
    }
}
