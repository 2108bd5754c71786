//! Kinetic Langevin dynamics
//!
//! ```text
//! dX = V dt
//! dV = -(V + ∇U(X)) dt + σ dW
//! ```
//!
//! together with its tangent flow `dJ = [[0, I], [-Hess U(X), -I]] J dt`.
//! Phase-space vectors are stored as `[x_1..x_d, v_1..v_d]` and tangent
//! matrices row-major in that basis.

use std::f64::consts::SQRT_2;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::parallel;
use crate::potentials::PotentialSpec;
use crate::quadrature;
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() || x.is_empty() {
            return Err(invalid("x and v must have the same nonzero length"));
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(invalid("phase state components must be finite"));
        }
        Ok(PhaseState { x, v })
    }

    pub fn zeros(dim: usize) -> Self {
        PhaseState { x: vec![0.0; dim], v: vec![0.0; dim] }
    }

    /// 1D convenience constructor.
    pub fn new_1d(x: f64, v: f64) -> Result<Self> {
        Self::new(vec![x], vec![v])
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.v);
        z
    }

    pub fn from_slice(z: &[f64]) -> Result<Self> {
        let d = z.len() / 2;
        Self::new(z[..d].to_vec(), z[d..2 * d].to_vec())
    }

    pub fn norm(&self) -> f64 {
        (linalg::dot(&self.x, &self.x) + linalg::dot(&self.v, &self.v)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFlow {
    pub dim: usize,
    /// `2d x 2d`, row-major.
    pub j: Vec<f64>,
}

impl TangentFlow {
    pub fn identity(dim: usize) -> Self {
        TangentFlow { dim, j: linalg::identity(2 * dim) }
    }

    pub fn operator_norm(&self) -> f64 {
        linalg::operator_norm(&self.j, 2 * self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    ExactOu,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "exact_ou" => Ok(Scheme::ExactOu),
            other => Err(Error::UnsupportedScheme(other.to_string())),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::ExactOu => "exact_ou",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub scheme: Scheme,
    pub sigma: f64,
    /// Worker count; `None` defers to `HYPOCERT_THREADS` or the core count.
    pub threads: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-2,
            t_final: 1.0,
            n_paths: 1000,
            master_seed: 0,
            scheme: Scheme::EulerMaruyama,
            sigma: SQRT_2,
            threads: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, p: &PotentialSpec) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.t_final > 0.0) || self.dt > self.t_final {
            return Err(invalid("need 0 < dt <= t_final"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma must be finite and nonnegative"));
        }
        if self.scheme == Scheme::ExactOu && !p.is_quadratic() {
            return Err(Error::UnsupportedScheme(format!(
                "exact_ou requires the quadratic potential, got `{}`",
                p.name
            )));
        }
        Ok(())
    }
}

/// Scratch buffers for one path.
pub(crate) struct Work {
    pub d: usize,
    pub g: Vec<f64>,
    pub hess: Vec<f64>,
    pub jnext: Vec<f64>,
}

impl Work {
    pub fn new(d: usize) -> Self {
        Work { d, g: vec![0.0; d], hess: vec![0.0; d * d], jnext: vec![0.0; 4 * d * d] }
    }
}

/// One Euler–Maruyama step on `z = [x, v]` in place with increment `dw`.
#[inline]
pub(crate) fn em_step_in_place(p: &PotentialSpec, z: &mut [f64], dt: f64, sigma: f64, dw: &[f64], w: &mut Work) {
    let d = w.d;
    let (x, v) = z.split_at_mut(d);
    p.grad(x, &mut w.g);
    for i in 0..d {
        let vi = v[i];
        x[i] += vi * dt;
        v[i] = vi - (vi + w.g[i]) * dt + sigma * dw[i];
    }
}

/// `J <- J + dt · D(x) J` with `D(x) = [[0, I], [-Hess U(x), -I]]`.
#[inline]
pub(crate) fn tangent_step_in_place(p: &PotentialSpec, x: &[f64], j: &mut [f64], dt: f64, w: &mut Work) {
    let d = w.d;
    let n = 2 * d;
    p.hess(x, &mut w.hess);
    for c in 0..n {
        for i in 0..d {
            // top block: dJ_x = J_v
            w.jnext[i * n + c] = j[i * n + c] + dt * j[(d + i) * n + c];
            // bottom block: dJ_v = -H J_x - J_v
            let mut hx = 0.0;
            for k in 0..d {
                hx += w.hess[i * d + k] * j[k * n + c];
            }
            w.jnext[(d + i) * n + c] = j[(d + i) * n + c] - dt * (hx + j[(d + i) * n + c]);
        }
    }
    j.copy_from_slice(&w.jnext);
}

fn check_finite(z: &[f64], path: usize, time: f64) -> Result<()> {
    if z.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup { path, time })
    }
}

/// Euler–Maruyama step `x' = x + v dt`, `v' = v - (v + ∇U(x)) dt + σ dW`.
pub fn step(z: &PhaseState, p: &PotentialSpec, dt: f64, dw: &[f64], sigma: f64) -> Result<PhaseState> {
    if !(dt >= 0.0) {
        return Err(invalid("dt must be nonnegative"));
    }
    if dw.len() != z.dim() || z.dim() != p.dim {
        return Err(invalid("dimension mismatch"));
    }
    let mut buf = z.to_vec();
    let mut w = Work::new(p.dim);
    em_step_in_place(p, &mut buf, dt, sigma, dw, &mut w);
    check_finite(&buf, 0, dt)?;
    PhaseState::from_slice(&buf)
}

/// Euler step of the tangent flow at position `x`.
pub fn step_tangent(j: &TangentFlow, x: &[f64], p: &PotentialSpec, dt: f64) -> Result<TangentFlow> {
    if j.dim != p.dim || x.len() != p.dim {
        return Err(invalid("dimension mismatch"));
    }
    let mut out = j.j.clone();
    let mut w = Work::new(p.dim);
    tangent_step_in_place(p, x, &mut out, dt, &mut w);
    check_finite(&out, 0, dt)?;
    Ok(TangentFlow { dim: j.dim, j: out })
}

/// The exact transition of the quadratic-potential dynamics over a fixed
/// time `t`: per coordinate pair `(x_i, v_i)`, `z' = Φ z + chol(Σ) ξ` with
/// `Φ = exp(tD)`, `D = [[0, 1], [-1, -1]]` and
/// `Σ = ∫_0^t exp(sD) σ² e eᵀ exp(sDᵀ) ds`.
#[derive(Debug, Clone)]
pub struct OuKernel {
    pub t: f64,
    pub sigma: f64,
    pub phi: [f64; 4],
    pub cov: [f64; 4],
    pub chol: [f64; 4],
}

pub const OU_GENERATOR: [f64; 4] = [0.0, 1.0, -1.0, -1.0];

impl OuKernel {
    pub fn new(t: f64, sigma: f64) -> Self {
        let scaled: Vec<f64> = OU_GENERATOR.iter().map(|c| c * t).collect();
        let phi = linalg::expm(&scaled, 2);
        let mut cov = [0.0; 4];
        if t > 0.0 {
            let panels = ((t * 8.0).ceil() as usize).clamp(4, 4096);
            for (k, c) in cov.iter_mut().enumerate() {
                *c = quadrature::integrate(
                    |s| {
                        let e = linalg::expm(&OU_GENERATOR.map(|c| c * s), 2);
                        // column for the velocity unit vector: (e01, e11)
                        let col = [e[1], e[3]];
                        sigma * sigma * col[k / 2] * col[k % 2]
                    },
                    0.0,
                    t,
                    panels,
                    16,
                );
            }
        }
        let l = linalg::cholesky_psd(&cov, 2);
        OuKernel {
            t,
            sigma,
            phi: [phi[0], phi[1], phi[2], phi[3]],
            cov,
            chol: [l[0], l[1], l[2], l[3]],
        }
    }

    /// Advance `z = [x, v]` (all coordinate pairs) in place.
    pub fn apply(&self, z: &mut [f64], rng: &mut ChaCha8Rng) {
        let d = z.len() / 2;
        for i in 0..d {
            let (x, v) = (z[i], z[d + i]);
            let xi0: f64 = rng.sample(StandardNormal);
            let xi1: f64 = rng.sample(StandardNormal);
            z[i] = self.phi[0] * x + self.phi[1] * v + self.chol[0] * xi0;
            z[d + i] = self.phi[2] * x + self.phi[3] * v + self.chol[2] * xi0 + self.chol[3] * xi1;
        }
    }

    /// The tangent flow over this kernel's time, block-diagonal per pair.
    pub fn tangent(&self, d: usize) -> Vec<f64> {
        let n = 2 * d;
        let mut j = vec![0.0; n * n];
        for i in 0..d {
            j[i * n + i] = self.phi[0];
            j[i * n + d + i] = self.phi[1];
            j[(d + i) * n + i] = self.phi[2];
            j[(d + i) * n + d + i] = self.phi[3];
        }
        j
    }
}

/// One draw from the exact transition of the quadratic-potential dynamics.
pub fn exact_ou_transition(
    z0: &PhaseState,
    p: &PotentialSpec,
    t: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PhaseState> {
    if !p.is_quadratic() {
        return Err(Error::UnsupportedScheme(format!(
            "exact transition requires the quadratic potential, got `{}`",
            p.name
        )));
    }
    if !(t >= 0.0) {
        return Err(invalid("t must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(z0.clone());
    }
    let mut z = z0.to_vec();
    OuKernel::new(t, sigma).apply(&mut z, rng);
    PhaseState::from_slice(&z)
}

/// Recorded states (and optionally tangent flows) of `n_paths` paths.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub record_times: Vec<f64>,
    pub master_seed: u64,
    pub domain: Domain,
    /// `[path][time][2d]`
    states: Vec<f64>,
    /// `[path][time][4d^2]`
    tangents: Option<Vec<f64>>,
}

impl TrajectoryEnsemble {
    fn stride(&self) -> usize {
        2 * self.dim
    }

    pub fn state(&self, path: usize, ti: usize) -> &[f64] {
        let s = self.stride();
        let off = (path * self.record_times.len() + ti) * s;
        &self.states[off..off + s]
    }

    pub fn tangent(&self, path: usize, ti: usize) -> Option<&[f64]> {
        let s = 4 * self.dim * self.dim;
        self.tangents.as_ref().map(|t| {
            let off = (path * self.record_times.len() + ti) * s;
            &t[off..off + s]
        })
    }

    pub fn has_tangents(&self) -> bool {
        self.tangents.is_some()
    }

    /// All path states at record index `ti`, flat `n_paths x 2d`.
    pub fn samples_at(&self, ti: usize) -> Vec<f64> {
        (0..self.n_paths).flat_map(|p| self.state(p, ti).to_vec()).collect()
    }

    /// Substream id of a path: the path index within `(master_seed, domain)`.
    pub fn substream_id(&self, path: usize) -> u64 {
        path as u64
    }

    /// CSV with columns `path_id, t, x_1.., v_1.. [, j_r_c..]`.
    pub fn write_csv<W: Write>(&self, w: W, include_j: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(ensemble_csv_header(self.dim, include_j && self.has_tangents()))?;
        for p in 0..self.n_paths {
            for (ti, t) in self.record_times.iter().enumerate() {
                let mut rec = vec![p.to_string(), fmt_f64(*t)];
                rec.extend(self.state(p, ti).iter().map(|c| fmt_f64(*c)));
                if include_j {
                    if let Some(j) = self.tangent(p, ti) {
                        rec.extend(j.iter().map(|c| fmt_f64(*c)));
                    }
                }
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn ensemble_csv_header(dim: usize, include_j: bool) -> Vec<String> {
    let mut h = vec!["path_id".to_string(), "t".to_string()];
    h.extend((1..=dim).map(|i| format!("x_{i}")));
    h.extend((1..=dim).map(|i| format!("v_{i}")));
    if include_j {
        for r in 1..=2 * dim {
            for c in 1..=2 * dim {
                h.push(format!("j_{r}_{c}"));
            }
        }
    }
    h
}

/// Shortest round-trip float formatting, so CSVs are bit-faithful.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Knobs of [`simulate_paths`] beyond the [`SimConfig`].
#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions {
    pub track_tangent: bool,
    pub domain: Domain,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions { track_tangent: true, domain: Domain::PRIMARY }
    }
}

fn validate_times(times: &[f64], t_final: f64) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("record_times must be nonempty"));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("record_times must be strictly increasing"));
    }
    if times[0] < 0.0 || *times.last().unwrap() > t_final * (1.0 + 1e-12) {
        return Err(invalid("record_times must lie in [0, t_final]"));
    }
    Ok(())
}

/// Simulate `cfg.n_paths` paths from `z0` recording at `record_times`,
/// tracking the tangent flow.
pub fn simulate_ensemble(
    z0: &PhaseState,
    p: &PotentialSpec,
    cfg: &SimConfig,
    record_times: &[f64],
) -> Result<TrajectoryEnsemble> {
    let z = z0.to_vec();
    simulate_paths(p, cfg, record_times, EnsembleOptions::default(), |_| z.clone())
}

/// Simulate paths whose initial state is `init(path_index)`.
///
/// Path `i` draws all of its noise from substream `(cfg.master_seed,
/// opts.domain, i)`, so the output is independent of the worker count.
/// Between record times the step is shortened so that every record time is
/// hit exactly.
pub fn simulate_paths<F>(
    p: &PotentialSpec,
    cfg: &SimConfig,
    record_times: &[f64],
    opts: EnsembleOptions,
    init: F,
) -> Result<TrajectoryEnsemble>
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    cfg.validate(p)?;
    validate_times(record_times, cfg.t_final)?;
    let d = p.dim;
    let nt = record_times.len();
    let kernels: Vec<Option<OuKernel>> = match cfg.scheme {
        Scheme::ExactOu => {
            let mut prev = 0.0;
            record_times
                .iter()
                .map(|&t| {
                    let k = (t > prev).then(|| OuKernel::new(t - prev, cfg.sigma));
                    prev = t;
                    k
                })
                .collect()
        }
        Scheme::EulerMaruyama => vec![None; nt],
    };

    let per_path = |path: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = substream(cfg.master_seed, opts.domain, path as u64);
        let mut z = init(path);
        if z.len() != 2 * d {
            return Err(invalid("initial state has the wrong dimension"));
        }
        check_finite(&z, path, 0.0)?;
        let mut j = linalg::identity(2 * d);
        let mut w = Work::new(d);
        let mut dw = vec![0.0; d];
        let mut states = Vec::with_capacity(nt * 2 * d);
        let mut tans = Vec::with_capacity(if opts.track_tangent { nt * 4 * d * d } else { 0 });
        let mut t_prev = 0.0;
        for (ti, &tr) in record_times.iter().enumerate() {
            if tr > t_prev {
                match &kernels[ti] {
                    Some(k) => {
                        k.apply(&mut z, &mut rng);
                        if opts.track_tangent {
                            j = linalg::matmul_new(&k.tangent(d), &j, 2 * d);
                        }
                    }
                    None => {
                        let span = tr - t_prev;
                        let n_sub = ((span / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
                        let h = span / n_sub as f64;
                        let sq = h.sqrt();
                        for k in 0..n_sub {
                            if opts.track_tangent {
                                tangent_step_in_place(p, &z[..d], &mut j, h, &mut w);
                            }
                            for c in dw.iter_mut() {
                                *c = sq * rng.sample::<f64, _>(StandardNormal);
                            }
                            em_step_in_place(p, &mut z, h, cfg.sigma, &dw, &mut w);
                            if !(z[0].is_finite() && z[d].is_finite()) {
                                return Err(Error::NumericalBlowup {
                                    path,
                                    time: t_prev + (k + 1) as f64 * h,
                                });
                            }
                        }
                    }
                }
                t_prev = tr;
            }
            check_finite(&z, path, tr)?;
            states.extend_from_slice(&z);
            if opts.track_tangent {
                check_finite(&j, path, tr)?;
                tans.extend_from_slice(&j);
            }
        }
        Ok((states, tans))
    };

    let results = parallel::map_indexed(cfg.threads, cfg.n_paths, per_path)?;
    let mut states = Vec::with_capacity(cfg.n_paths * nt * 2 * d);
    let mut tangents = Vec::with_capacity(if opts.track_tangent { cfg.n_paths * nt * 4 * d * d } else { 0 });
    for (s, t) in results {
        states.extend(s);
        tangents.extend(t);
    }
    Ok(TrajectoryEnsemble {
        dim: d,
        n_paths: cfg.n_paths,
        record_times: record_times.to_vec(),
        master_seed: cfg.master_seed,
        domain: opts.domain,
        states,
        tangents: opts.track_tangent.then_some(tangents),
    })
}

/// Exact mean and covariance of one coordinate pair `(x, v)` at time `t`
/// for the quadratic potential.
pub fn exact_moments_quadratic(z0: [f64; 2], t: f64, sigma: f64) -> ([f64; 2], [f64; 4]) {
    let k = OuKernel::new(t, sigma);
    let m = [k.phi[0] * z0[0] + k.phi[1] * z0[1], k.phi[2] * z0[0] + k.phi[3] * z0[1]];
    (m, k.cov)
}

/// Mean and covariance of the Euler–Maruyama chain for the quadratic
/// potential after `round(t / dt)` steps, by the exact moment recursion
/// `m' = A m`, `S' = A S Aᵀ + σ² dt e eᵀ` with `A = I + dt D`.
pub fn euler_moments_quadratic(z0: [f64; 2], t: f64, dt: f64, sigma: f64) -> ([f64; 2], [f64; 4]) {
    let n = (t / dt).round() as usize;
    let a = [1.0, dt, -dt, 1.0 - dt];
    let mut m = z0;
    let mut s = [0.0; 4];
    for _ in 0..n {
        m = [a[0] * m[0] + a[1] * m[1], a[2] * m[0] + a[3] * m[1]];
        let as_ = linalg::matmul_new(&a, &s, 2);
        let mut next = linalg::matmul_new(&as_, &linalg::transpose(&a, 2), 2);
        next[3] += sigma * sigma * dt;
        s = [next[0], next[1], next[2], next[3]];
    }
    (m, s)
}

/// `E|Z_t|^2` from a mean and covariance of one coordinate pair.
pub fn second_moment(m: [f64; 2], s: [f64; 4]) -> f64 {
    m[0] * m[0] + m[1] * m[1] + s[0] + s[3]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::make_quadratic;

    #[test]
    fn one_step_hand_arithmetic() {
        let p = make_quadratic(1).unwrap();
        let z = step(&PhaseState::new_1d(0.0, 1.0).unwrap(), &p, 0.01, &[0.0], SQRT_2).unwrap();
        assert!((z.x[0] - 0.01).abs() < 1e-15 && (z.v[0] - 0.99).abs() < 1e-15);
        let z = step(&PhaseState::new_1d(1.0, 0.0).unwrap(), &p, 0.01, &[0.0], SQRT_2).unwrap();
        assert!((z.x[0] - 1.0).abs() < 1e-15 && (z.v[0] + 0.01).abs() < 1e-15);
        let z = step(&PhaseState::zeros(1), &p, 0.01, &[0.0], SQRT_2).unwrap();
        assert_eq!(z, PhaseState::zeros(1));
    }

    #[test]
    fn nonfinite_state_rejected() {
        assert!(PhaseState::new_1d(f64::NAN, 0.0).is_err());
        assert!(PhaseState::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn exact_ou_requires_quadratic() {
        let p = crate::potentials::make_bump_double_well(2.0, 1.0).unwrap();
        let mut rng = substream(0, Domain::PRIMARY, 0);
        let r = exact_ou_transition(&PhaseState::zeros(1), &p, 1.0, SQRT_2, &mut rng);
        assert!(matches!(r, Err(Error::UnsupportedScheme(_))));
    }

    #[test]
    fn ou_kernel_stationary_covariance() {
        // D Σ + Σ Dᵀ + σ² e eᵀ = 0 has Σ = I for σ = √2
        let k = OuKernel::new(50.0, SQRT_2);
        assert!(linalg::max_abs_diff(&k.cov, &[1.0, 0.0, 0.0, 1.0]) < 1e-10);
    }

    #[test]
    fn euler_recursion_converges_to_exact() {
        let (me, se) = exact_moments_quadratic([1.0, 0.5], 1.0, SQRT_2);
        let (mm, sm) = euler_moments_quadratic([1.0, 0.5], 1.0, 1e-5, SQRT_2);
        assert!((me[0] - mm[0]).abs() < 1e-4);
        assert!(linalg::max_abs_diff(&se, &sm) < 1e-4);
    }
}
