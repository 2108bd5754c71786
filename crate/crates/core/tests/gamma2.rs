use hypocert::dynamics::{PhaseState, SimConfig};
use hypocert::gamma2::{c_m, gamma, gamma2, gamma2_lower_bound, verify_gradient_bound, QuadraticObservable};
use hypocert::potentials::{make_bump_double_well, make_quadratic, PotentialSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(rng: &mut ChaCha8Rng, scale: f64) -> PhaseState {
    PhaseState::new_1d(scale * (2.0 * rng.random::<f64>() - 1.0), scale * (2.0 * rng.random::<f64>() - 1.0)).unwrap()
}

/// Generator `Lh = h_vv + v h_x - (v + U'(x)) h_v` by central differences.
fn generator<F: Fn(f64, f64) -> f64>(h: &F, p: &PotentialSpec, x: f64, v: f64) -> f64 {
    let e = 1e-3;
    let hx = (h(x + e, v) - h(x - e, v)) / (2.0 * e);
    let hv = (h(x, v + e) - h(x, v - e)) / (2.0 * e);
    let hvv = (h(x, v + e) - 2.0 * h(x, v) + h(x, v - e)) / (e * e);
    hvv + v * hx - (v + p.grad_vec(&[x])[0]) * hv
}

fn carre<F: Fn(f64, f64) -> f64, G: Fn(f64, f64) -> f64>(f: &F, g: &G, x: f64, v: f64) -> f64 {
    let e = 1e-4;
    let d = |h: &dyn Fn(f64, f64) -> f64| {
        ((h(x + e, v) - h(x - e, v)) / (2.0 * e), (h(x, v + e) - h(x, v - e)) / (2.0 * e))
    };
    let (fx, fv) = d(f);
    let (gx, gv) = d(g);
    2.0 * fx * gx - fx * gv - fv * gx + 2.0 * fv * gv
}

#[test]
fn carre_du_champ_of_position() {
    let f = QuadraticObservable::linear(vec![1.0, 0.0]).unwrap();
    assert_eq!(gamma(&f, &f, &PhaseState::new_1d(0.3, -2.0).unwrap()), 2.0);
}

#[test]
fn carre_du_champ_of_sum() {
    let f = QuadraticObservable::linear(vec![1.0, 1.0]).unwrap();
    assert_eq!(gamma(&f, &f, &PhaseState::zeros(1)), 2.0);
}

#[test]
fn carre_du_champ_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let f = QuadraticObservable::random(1, &mut rng);
        let z = point(&mut rng, 5.0);
        let g = f.grad(&z.to_vec());
        let n2 = g[0] * g[0] + g[1] * g[1];
        let gam = gamma(&f, &f, &z);
        assert!(n2 <= gam * (1.0 + 1e-12) && gam <= 3.0 * n2 * (1.0 + 1e-12));
    }
}

#[test]
fn iterated_form_of_velocity() {
    let p = make_quadratic(1).unwrap();
    let f = QuadraticObservable::linear(vec![0.0, 1.0]).unwrap();
    assert!((gamma2(&f, &p, &PhaseState::new_1d(0.4, 1.1).unwrap()) - 2.0).abs() < 1e-12);
}

#[test]
fn iterated_form_matches_generator_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in [make_quadratic(1).unwrap(), make_bump_double_well(2.0, 1.0).unwrap()] {
        for _ in 0..200 {
            let f = QuadraticObservable::random(1, &mut rng);
            let z = point(&mut rng, 3.0);
            let fv = |x: f64, v: f64| f.value(&[x, v]);
            let lf = |x: f64, v: f64| generator(&fv, &p, x, v);
            let gam = |x: f64, v: f64| carre(&fv, &fv, x, v);
            let (x, v) = (z.x[0], z.v[0]);
            let oracle = generator(&gam, &p, x, v) - 2.0 * carre(&fv, &lf, x, v);
            let got = gamma2(&f, &p, &z);
            assert!((got - oracle).abs() < 1e-3 * (1.0 + oracle.abs()), "{}: {got} vs {oracle}", p.name);
        }
    }
}

#[test]
fn iterated_form_lower_bound() {
    let p = make_quadratic(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let f = QuadraticObservable::random(1, &mut rng);
        let z = point(&mut rng, 5.0);
        assert!(gamma2(&f, &p, &z) >= gamma2_lower_bound(&f, p.hess_bound, &z) - 1e-10);
    }
}

#[test]
fn gradient_constant_at_unit_hessian_bound() {
    assert_eq!(c_m(1.0), 23.0);
}

#[test]
fn gradient_bound_trivial_for_constants() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 1000, ..SimConfig::default() };
    let f = QuadraticObservable::constant(1, 2.5);
    let rep = verify_gradient_bound(&p, 1.0, &[f], &[PhaseState::new_1d(1.0, 1.0).unwrap()], &cfg).unwrap();
    assert_eq!(rep.rows[0].lhs, 0.0);
    assert!(rep.pass);
}

#[test]
fn gradient_of_position_matches_linear_flow() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 20_000, dt: 1e-3, ..SimConfig::default() };
    let f = QuadraticObservable::linear(vec![1.0, 0.0]).unwrap();
    let rep = verify_gradient_bound(&p, 1.0, &[f], &[PhaseState::zeros(1)], &cfg).unwrap();
    // ∇P_t f = exp(tD)ᵀ e_x
    let w = 3f64.sqrt() / 2.0;
    let e = (-0.5f64).exp();
    let (c, s) = (w.cos(), w.sin() / w);
    let exact = (e * (c + 0.5 * s)).powi(2) + (e * s).powi(2);
    assert!((rep.rows[0].lhs - exact).abs() < 1e-3, "{} vs {exact}", rep.rows[0].lhs);
    assert!(rep.rows[0].margin() > 0.0);
    assert!(rep.pass);
}

#[test]
fn gradient_bound_at_large_time() {
    let p = make_quadratic(1).unwrap();
    let cfg = SimConfig { n_paths: 20_000, ..SimConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fns: Vec<_> = (0..4).map(|_| QuadraticObservable::random(1, &mut rng)).collect();
    let rep = verify_gradient_bound(&p, 10.0, &fns, &[PhaseState::new_1d(1.0, 0.0).unwrap()], &cfg).unwrap();
    for r in &rep.rows {
        assert!(r.lhs <= r.rhs + 3.0 * r.se);
    }
    assert!(rep.pass);
}

proptest! {
    #[test]
    fn carre_du_champ_symmetric_and_bilinear(
        a in prop::array::uniform2(-5.0f64..5.0),
        b in prop::array::uniform2(-5.0f64..5.0),
        s in -3.0f64..3.0,
    ) {
        let z = PhaseState::zeros(1);
        let fa = QuadraticObservable::linear(a.to_vec()).unwrap();
        let fb = QuadraticObservable::linear(b.to_vec()).unwrap();
        let sum = QuadraticObservable::linear(vec![a[0] + s * b[0], a[1] + s * b[1]]).unwrap();
        prop_assert!((gamma(&fa, &fb, &z) - gamma(&fb, &fa, &z)).abs() < 1e-12);
        let lhs = gamma(&sum, &fb, &z);
        let rhs = gamma(&fa, &fb, &z) + s * gamma(&fb, &fb, &z);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
