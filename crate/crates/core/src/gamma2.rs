//! Carré-du-champ forms on quadratic observables.
//!
//! `Γ(f, g) = ∇fᵀ S ∇g` with `S = [[2I, -I], [-I, 2I]]` in the `(x, v)`
//! block basis, and `Γ₂(f) = LΓ(f, f) - 2Γ(f, Lf)` for the generator
//! `L = Δ_v + v·∇_x - (v + ∇U)·∇_v`. For quadratic `f` (gradient `g`,
//! constant Hessian `H`) everything reduces to
//!
//! ```text
//! Γ₂(f) = 2 tr((H S H)_vv) - gᵀ (S J_bᵀ + J_b S) g
//! ```
//!
//! where `J_b = [[0, I], [-Hess U, -I]]` is the drift Jacobian.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{fmt_f64, simulate_ensemble, PhaseState, SimConfig};
use crate::error::{invalid, Result};
use crate::linalg;
use crate::potentials::PotentialSpec;

/// `f(z) = zᵀ A z + bᵀ z + c` on phase space of dimension `2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObservable {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticObservable {
    pub fn new(dim: usize, a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let n = 2 * dim;
        if dim == 0 || a.len() != n * n || b.len() != n {
            return Err(invalid("observable dimensions do not match"));
        }
        for i in 0..n {
            for j in 0..i {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                    return Err(invalid("A must be symmetric"));
                }
            }
        }
        Ok(QuadraticObservable { dim, a, b, c })
    }

    /// The linear observable `bᵀ z`.
    pub fn linear(b: Vec<f64>) -> Result<Self> {
        let dim = b.len() / 2;
        Self::new(dim, vec![0.0; 4 * dim * dim], b, 0.0)
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        QuadraticObservable { dim, a: vec![0.0; 4 * dim * dim], b: vec![0.0; 2 * dim], c }
    }

    /// Standard-normal coefficients (A symmetrized).
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let n = 2 * dim;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.sample(StandardNormal);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let b = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        QuadraticObservable { dim, a, b, c: rng.sample(StandardNormal) }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let az = linalg::matvec(&self.a, z, 2 * self.dim);
        linalg::dot(z, &az) + linalg::dot(&self.b, z) + self.c
    }

    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        let n = 2 * self.dim;
        let az = linalg::matvec(&self.a, z, n);
        az.iter().zip(&self.b).map(|(p, q)| 2.0 * p + q).collect()
    }

    pub fn hessian(&self) -> Vec<f64> {
        self.a.iter().map(|x| 2.0 * x).collect()
    }
}

/// The matrix `S` of the form Γ.
pub fn gamma_matrix(dim: usize) -> Vec<f64> {
    let n = 2 * dim;
    let mut s = vec![0.0; n * n];
    for i in 0..dim {
        s[i * n + i] = 2.0;
        s[(dim + i) * n + dim + i] = 2.0;
        s[i * n + dim + i] = -1.0;
        s[(dim + i) * n + i] = -1.0;
    }
    s
}

/// `Γ(f, g)(z) = 2∇ₓf·∇ₓg - ∇ₓf·∇_vg - ∇_vf·∇ₓg + 2∇_vf·∇_vg`.
pub fn gamma(f: &QuadraticObservable, g: &QuadraticObservable, z: &PhaseState) -> f64 {
    let zz = z.to_vec();
    gamma_of_gradients(&f.grad(&zz), &g.grad(&zz))
}

pub fn gamma_of_gradients(gf: &[f64], gg: &[f64]) -> f64 {
    let d = gf.len() / 2;
    let mut s = 0.0;
    for i in 0..d {
        let (fx, fv, gx, gv) = (gf[i], gf[d + i], gg[i], gg[d + i]);
        s += 2.0 * fx * gx - fx * gv - fv * gx + 2.0 * fv * gv;
    }
    s
}

/// Exact `Γ₂(f)(z)` for quadratic `f`, with unit diffusion coefficient on
/// `Δ_v` (σ = √2).
pub fn gamma2(f: &QuadraticObservable, p: &PotentialSpec, z: &PhaseState) -> f64 {
    let d = f.dim;
    let n = 2 * d;
    let zz = z.to_vec();
    let g = f.grad(&zz);
    let h = f.hessian();
    let s = gamma_matrix(d);
    let hsh = linalg::matmul_new(&linalg::matmul_new(&h, &s, n), &h, n);
    let trace_vv: f64 = (d..n).map(|i| hsh[i * n + i]).sum();
    let jb = linalg::drift_jacobian(&p.hess_vec(&z.x), d);
    // gᵀ (S J_bᵀ + J_b S) g = 2 gᵀ S J_bᵀ g
    let jt_g = linalg::matvec(&linalg::transpose(&jb, n), &g, n);
    let s_jt_g = linalg::matvec(&s, &jt_g, n);
    2.0 * trace_vv - 2.0 * linalg::dot(&g, &s_jt_g)
}

/// `14 + 6M^2 + 2M`
pub fn gamma2_coefficient(m: f64) -> f64 {
    14.0 + 6.0 * m * m + 2.0 * m
}

/// `C_M = 15 + 6M^2 + 2M`
pub fn c_m(m: f64) -> f64 {
    gamma2_coefficient(m) + 1.0
}

/// `|∇ₓf|^2 - (14 + 6M^2 + 2M)|∇_vf|^2`
pub fn gamma2_lower_bound(f: &QuadraticObservable, m: f64, z: &PhaseState) -> f64 {
    let g = f.grad(&z.to_vec());
    let d = f.dim;
    let gx: f64 = g[..d].iter().map(|c| c * c).sum();
    let gv: f64 = g[d..].iter().map(|c| c * c).sum();
    gx - gamma2_coefficient(m) * gv
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientRow {
    pub t: f64,
    pub z: Vec<f64>,
    pub fn_index: usize,
    /// `|∇P_t f(z)|^2`
    pub lhs: f64,
    /// `C_M P_t(f^2) + 3 e^{-t/3} P_t(|∇f|^2)`
    pub rhs: f64,
    /// Standard error of `lhs - rhs` (delta method).
    pub se: f64,
    pub pass: bool,
}

impl GradientRow {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub c_m: f64,
    pub rows: Vec<GradientRow>,
    pub pass: bool,
}

impl GradientReport {
    /// CSV columns `t, x_1.., v_1.., fn, lhs, rhs, margin, pass`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.rows.first().map_or(1, |r| r.z.len() / 2);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("v_{i}")));
        header.extend(["fn", "lhs", "rhs", "margin", "pass"].map(String::from));
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![fmt_f64(r.t)];
            rec.extend(r.z.iter().map(|c| fmt_f64(*c)));
            rec.push(r.fn_index.to_string());
            rec.push(fmt_f64(r.lhs));
            rec.push(fmt_f64(r.rhs));
            rec.push(fmt_f64(r.margin()));
            rec.push(r.pass.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Monte Carlo check of
/// `|∇P_t f|^2 <= C_M P_t(f^2) + 3 e^{-t/3} P_t(|∇f|^2)` using the pathwise
/// gradient `∇P_t f(z) = E[J_{0,t}ᵀ ∇f(Z_t)]`. A row passes when
/// `lhs <= rhs + 3 se`.
pub fn verify_gradient_bound(
    p: &PotentialSpec,
    t: f64,
    test_fns: &[QuadraticObservable],
    z_grid: &[PhaseState],
    cfg: &SimConfig,
) -> Result<GradientReport> {
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    if test_fns.iter().any(|f| f.dim != p.dim) {
        return Err(invalid("observable dimension does not match the potential"));
    }
    let cm = c_m(p.hess_bound);
    let decay = 3.0 * (-t / 3.0).exp();
    let n = 2 * p.dim;
    let mut cfg = cfg.clone();
    cfg.t_final = t;
    cfg.dt = cfg.dt.min(t);
    let mut rows = Vec::new();
    for z in z_grid {
        let ens = simulate_ensemble(z, p, &cfg, &[t])?;
        let np = ens.n_paths;
        for (fi, f) in test_fns.iter().enumerate() {
            let mut ys = Vec::with_capacity(np);
            let mut rs = Vec::with_capacity(np);
            for path in 0..np {
                let zt = ens.state(path, 0);
                let j = ens.tangent(path, 0).unwrap();
                let g = f.grad(zt);
                ys.push(linalg::matvec(&linalg::transpose(j, n), &g, n));
                let fv = f.value(zt);
                rs.push(cm * fv * fv + decay * linalg::dot(&g, &g));
            }
            let npf = np as f64;
            let mut ybar = vec![0.0; n];
            for y in &ys {
                ybar.iter_mut().zip(y).for_each(|(a, b)| *a += b / npf);
            }
            let rbar = rs.iter().sum::<f64>() / npf;
            let lhs = linalg::dot(&ybar, &ybar);
            // influence of each path on lhs - rhs
            let infl: Vec<f64> = ys.iter().zip(&rs).map(|(y, r)| 2.0 * linalg::dot(&ybar, y) - r).collect();
            let se = crate::stats::mean_se(infl.iter().copied()).se;
            rows.push(GradientRow {
                t,
                z: z.to_vec(),
                fn_index: fi,
                lhs,
                rhs: rbar,
                se,
                pass: lhs <= rbar + 3.0 * se,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(GradientReport { c_m: cm, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::make_quadratic;

    #[test]
    fn gamma_hand_values() {
        let z = PhaseState::new_1d(0.3, -0.7).unwrap();
        let fx = QuadraticObservable::linear(vec![1.0, 0.0]).unwrap();
        let fxv = QuadraticObservable::linear(vec![1.0, 1.0]).unwrap();
        assert_eq!(gamma(&fx, &fx, &z), 2.0);
        assert_eq!(gamma(&fxv, &fxv, &z), 2.0);
    }

    #[test]
    fn gamma2_of_velocity() {
        let p = make_quadratic(1).unwrap();
        let f = QuadraticObservable::linear(vec![0.0, 1.0]).unwrap();
        assert!((gamma2(&f, &p, &PhaseState::new_1d(1.0, 2.0).unwrap()) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn c_m_at_one() {
        assert_eq!(c_m(1.0), 23.0);
    }
}
