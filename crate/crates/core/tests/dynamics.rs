use hypocert::dynamics::{
    exact_ou_transition, simulate_ensemble, step, step_tangent, PhaseState, Scheme, SimConfig, TangentFlow,
};
use hypocert::linalg;
use hypocert::potentials::{make_bump_double_well, make_quadratic};
use hypocert::rng::{substream, Domain};
use hypocert::stats::{energy_test, mean_se};
use proptest::prelude::*;

const SIGMA: f64 = std::f64::consts::SQRT_2;

/// `exp(tD)` for `D = [[0, 1], [-1, -1]]` from its eigenvalues `-1/2 ± i√3/2`.
fn exp_td(t: f64) -> [f64; 4] {
    let w = 3f64.sqrt() / 2.0;
    let (c, s) = ((w * t).cos(), (w * t).sin() / w);
    let e = (-t / 2.0).exp();
    // D + I/2 = [[1/2, 1], [-1, -1/2]]
    [e * (c + 0.5 * s), e * s, -e * s, e * (c - 0.5 * s)]
}

#[test]
fn origin_is_fixed_without_noise() {
    let p = make_quadratic(1).unwrap();
    let z = step(&PhaseState::zeros(1), &p, 0.01, &[0.0], SIGMA).unwrap();
    assert_eq!(z.to_vec(), vec![0.0, 0.0]);
}

#[test]
fn one_step_from_unit_velocity() {
    let p = make_quadratic(1).unwrap();
    let z = step(&PhaseState::new_1d(0.0, 1.0).unwrap(), &p, 0.01, &[0.0], SIGMA).unwrap();
    assert!((z.x[0] - 0.01).abs() < 1e-15);
    assert!((z.v[0] - 0.99).abs() < 1e-15);
}

#[test]
fn one_step_from_unit_position() {
    let p = make_quadratic(1).unwrap();
    let z = step(&PhaseState::new_1d(1.0, 0.0).unwrap(), &p, 0.01, &[0.0], SIGMA).unwrap();
    assert_eq!(z.x[0], 1.0);
    assert!((z.v[0] + 0.01).abs() < 1e-15);
}

#[test]
fn zero_tangent_step_is_identity() {
    let p = make_quadratic(1).unwrap();
    let j = step_tangent(&TangentFlow::identity(1), &[0.3], &p, 0.0).unwrap();
    assert_eq!(j.j, linalg::identity(2));
}

#[test]
fn tangent_flow_matches_matrix_exponential() {
    let p = make_quadratic(1).unwrap();
    let mut j = TangentFlow::identity(1);
    for _ in 0..10_000 {
        j = step_tangent(&j, &[0.0], &p, 1e-4).unwrap();
    }
    let want = exp_td(1.0);
    assert!(linalg::max_abs_diff(&j.j, &want) < 1e-3, "{:?} vs {want:?}", j.j);
}

#[test]
fn tangent_norm_within_growth_bound() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 64, t_final: 1.0, ..SimConfig::default() };
    let ens = simulate_ensemble(&PhaseState::new_1d(1.0, -1.0).unwrap(), &p, &cfg, &[1.0]).unwrap();
    for i in 0..ens.n_paths {
        let n = linalg::operator_norm(ens.tangent(i, 0).unwrap(), 2);
        assert!(n <= (1.0 + p.hess_bound).exp());
    }
}

#[test]
fn noiseless_path_stays_at_origin() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 1, sigma: 0.0, t_final: 2.0, ..SimConfig::default() };
    let ens = simulate_ensemble(&PhaseState::zeros(1), &p, &cfg, &[0.5, 1.0, 2.0]).unwrap();
    for ti in 0..3 {
        assert_eq!(ens.state(0, ti), &[0.0, 0.0]);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let base = SimConfig { n_paths: 500, t_final: 1.0, master_seed: 99, ..SimConfig::default() };
    let z0 = PhaseState::new_1d(0.5, 0.5).unwrap();
    let one = simulate_ensemble(&z0, &p, &SimConfig { threads: Some(1), ..base.clone() }, &[0.5, 1.0]).unwrap();
    let eight = simulate_ensemble(&z0, &p, &SimConfig { threads: Some(8), ..base }, &[0.5, 1.0]).unwrap();
    for ti in 0..2 {
        let (a, b) = (one.samples_at(ti), eight.samples_at(ti));
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn ensemble_mean_follows_linear_flow() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 100_000, t_final: 1.0, dt: 1e-3, ..SimConfig::default() };
    let z0 = [1.0, 0.5];
    let ens = simulate_ensemble(&PhaseState::from_slice(&z0).unwrap(), &p, &cfg, &[1.0]).unwrap();
    let phi = exp_td(1.0);
    let want = [phi[0] * z0[0] + phi[1] * z0[1], phi[2] * z0[0] + phi[3] * z0[1]];
    for c in 0..2 {
        let est = mean_se((0..ens.n_paths).map(|i| ens.state(i, 0)[c]));
        assert!((est.mean - want[c]).abs() < 3.0 * est.se, "coord {c}: {est:?} vs {}", want[c]);
    }
}

#[test]
fn exact_transition_at_zero_time_is_identity() {
    let p = make_quadratic(1).unwrap();
    let z = PhaseState::new_1d(0.7, -1.3).unwrap();
    let mut rng = substream(1, Domain::PRIMARY, 0);
    assert_eq!(exact_ou_transition(&z, &p, 0.0, SIGMA, &mut rng).unwrap(), z);
}

#[test]
fn exact_transition_rejects_non_quadratic() {
    let p = make_bump_double_well(2.0, 1.0).unwrap();
    let mut rng = substream(1, Domain::PRIMARY, 0);
    assert!(exact_ou_transition(&PhaseState::zeros(1), &p, 1.0, SIGMA, &mut rng).is_err());
    let cfg = SimConfig { scheme: Scheme::ExactOu, ..SimConfig::default() };
    assert!(cfg.validate(&p).is_err());
}

/// Solve `DΣ + ΣDᵀ + σ² e eᵀ = 0` for the symmetric `Σ = [[a, b], [b, c]]`.
fn stationary_cov(sigma: f64) -> [f64; 3] {
    // unknowns (a, b, c); D = [[0, 1], [-1, -1]]
    let m = nalgebra::Matrix3::new(0.0, 2.0, 0.0, -1.0, -1.0, 1.0, 0.0, -2.0, -2.0);
    let rhs = nalgebra::Vector3::new(0.0, 0.0, -sigma * sigma);
    let s = m.lu().solve(&rhs).unwrap();
    [s[0], s[1], s[2]]
}

#[test]
fn exact_transition_reaches_stationary_law() {
    let p = make_quadratic(1).unwrap();
    let [a, b, c] = stationary_cov(SIGMA);
    let z0 = PhaseState::new_1d(3.0, -2.0).unwrap();
    let cfg = SimConfig { n_paths: 100_000, t_final: 50.0, dt: 50.0, scheme: Scheme::ExactOu, ..SimConfig::default() };
    let ens = simulate_ensemble(&z0, &p, &cfg, &[50.0]).unwrap();
    let moment = |i: usize, j: usize| mean_se((0..ens.n_paths).map(|k| ens.state(k, 0)[i] * ens.state(k, 0)[j]));
    let (xx, xv, vv) = (moment(0, 0), moment(0, 1), moment(1, 1));
    assert!((xx.mean - a).abs() < 3.0 * xx.se, "{xx:?} vs {a}");
    assert!((xv.mean - b).abs() < 3.0 * xv.se, "{xv:?} vs {b}");
    assert!((vv.mean - c).abs() < 3.0 * vv.se, "{vv:?} vs {c}");
}

#[test]
fn euler_and_exact_agree_in_distribution() {
    let p = make_quadratic(1).unwrap();
    let z0 = PhaseState::new_1d(1.0, 0.0).unwrap();
    let n = 2_000;
    let base = SimConfig { n_paths: n, t_final: 1.0, dt: 1e-4, master_seed: 11, ..SimConfig::default() };
    let em = simulate_ensemble(&z0, &p, &base, &[1.0]).unwrap();
    let ex = simulate_ensemble(
        &z0,
        &p,
        &SimConfig { scheme: Scheme::ExactOu, master_seed: 12, ..base },
        &[1.0],
    )
    .unwrap();
    let t = energy_test(&em.samples_at(0), &ex.samples_at(0), 2, 199, 3);
    assert!(t.p_value > 0.01, "{t:?}");
}

proptest! {
    #[test]
    fn noiseless_quadratic_step_is_linear(
        x1 in -5.0f64..5.0, v1 in -5.0f64..5.0, x2 in -5.0f64..5.0, v2 in -5.0f64..5.0, s in -3.0f64..3.0,
    ) {
        let p = make_quadratic(1).unwrap();
        let f = |x: f64, v: f64| step(&PhaseState::new_1d(x, v).unwrap(), &p, 0.01, &[0.0], SIGMA).unwrap().to_vec();
        let lhs = f(x1 + s * x2, v1 + s * v2);
        let (a, b) = (f(x1, v1), f(x2, v2));
        for k in 0..2 {
            prop_assert!((lhs[k] - (a[k] + s * b[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_flow_composes(t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
        let p = make_quadratic(1).unwrap();
        let run = |t: f64| {
            let n = (t / 1e-3).round() as usize;
            let mut j = TangentFlow::identity(1);
            for _ in 0..n {
                j = step_tangent(&j, &[0.0], &p, t / n as f64).unwrap();
            }
            j.j
        };
        let composed = linalg::matmul_new(&run(t2), &run(t1), 2);
        let direct = exp_td(t1 + t2);
        prop_assert!(linalg::max_abs_diff(&composed, &direct) < 5e-3);
    }
}
