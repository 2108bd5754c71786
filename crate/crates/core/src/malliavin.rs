//! Short-time Gaussian structure of the kinetic dynamics and the coupling
//! probability of two independent copies.
//!
//! Per coordinate pair, `Z_t ≈ E Z_t + ∫_0^t (A₁ + (t-s) C₁) σ dW_s` with
//! `A₁ = (0, 1)` and `C₁ = ∇B·A₁ = (1, -1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{
    em_step_in_place, fmt_f64, simulate_paths, tangent_step_in_place, EnsembleOptions, PhaseState, SimConfig, Work,
};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::lyapunov::LyapunovParams;
use crate::metric::rho_upper;
use crate::parallel;
use crate::potentials::PotentialSpec;
use crate::rng::{substream, Domain};
use crate::stats::{self, LinearFit, ProportionCi};

/// `∇B(z)·A₁` summed over the noise directions: `(1, .., 1, -1, .., -1)`.
pub fn commutator_direction(p: &PotentialSpec, z: &PhaseState) -> Vec<f64> {
    let d = p.dim;
    let n = 2 * d;
    let jb = linalg::drift_jacobian(&p.hess_vec(&z.x), d);
    let mut out = vec![0.0; n];
    for i in 0..d {
        // column of ∇B for the i-th velocity, restricted to the (x_i, v_i) pair
        out[i] = jb[i * n + d + i];
        out[d + i] = jb[(d + i) * n + d + i];
    }
    out
}

/// Per-pair covariance `σ² [t³/3, t²/2 - t³/3; t²/2 - t³/3, t - t² + t³/3]`.
pub fn gaussian_part_pair_cov(t: f64, sigma: f64) -> Result<[f64; 4]> {
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    let s2 = sigma * sigma;
    let (t2, t3) = (t * t, t * t * t);
    let xv = s2 * (t2 / 2.0 - t3 / 3.0);
    Ok([s2 * t3 / 3.0, xv, xv, s2 * (t - t2 + t3 / 3.0)])
}

/// Covariance of the Gaussian part as a `2d x 2d` matrix in `(x, v)` blocks.
pub fn gaussian_part_cov(t: f64, sigma: f64, dim: usize) -> Result<Vec<f64>> {
    let c = gaussian_part_pair_cov(t, sigma)?;
    let n = 2 * dim;
    let mut m = vec![0.0; n * n];
    for i in 0..dim {
        m[i * n + i] = c[0];
        m[i * n + dim + i] = c[1];
        m[(dim + i) * n + i] = c[2];
        m[(dim + i) * n + dim + i] = c[3];
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianApprox {
    pub t: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub cov: Vec<f64>,
    /// `‖Cov(Z_t) - Σ_G(t)‖_∞ / t²`, the empirical coefficient of the error term.
    pub error_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproxRow {
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    /// `‖Cov_MC(Z_t) - Cov_MC(G_t)‖_∞` with `G_t` driven by the same noise.
    pub dev_norm: f64,
    /// Batch-means standard error of the entry attaining `dev_norm`.
    pub dev_se: f64,
    /// `‖Cov_MC(Z_t) - Σ_G(t)‖_∞`
    pub raw_dev: f64,
    /// `σ² t⁴`
    pub predicted: f64,
    pub approx: GaussianApprox,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApproxReport {
    pub rows: Vec<ApproxRow>,
    /// Log–log fit of `dev_norm` against `t`.
    pub fit: Option<LinearFit>,
    pub slope_threshold: f64,
    pub pass: bool,
}

impl ApproxReport {
    pub fn slope(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.slope)
    }

    /// CSV columns `t, dev_norm, dev_se, raw_dev, predicted, slope`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "dev_norm", "dev_se", "raw_dev", "predicted", "slope"])?;
        for r in &self.rows {
            wr.write_record([
                fmt_f64(r.t),
                fmt_f64(r.dev_norm),
                fmt_f64(r.dev_se),
                fmt_f64(r.raw_dev),
                fmt_f64(r.predicted),
                fmt_f64(self.slope()),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Minimum number of Euler steps per run of [`validate_gaussian_approx`].
pub const MIN_STEPS: usize = 40;
/// Slope the error decomposition is expected to reach.
pub const SLOPE_THRESHOLD: f64 = 3.5;
const BATCHES: usize = 64;

/// Running first and second moments of `(Z - centre, G)` over a batch.
#[derive(Clone)]
struct Moments {
    n: usize,
    sz: Vec<f64>,
    sg: Vec<f64>,
    szz: Vec<f64>,
    sgg: Vec<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Moments { n: 0, sz: vec![0.0; m], sg: vec![0.0; m], szz: vec![0.0; m * m], sgg: vec![0.0; m * m] }
    }

    fn push(&mut self, z: &[f64], g: &[f64]) {
        let m = z.len();
        self.n += 1;
        for i in 0..m {
            self.sz[i] += z[i];
            self.sg[i] += g[i];
            for j in 0..m {
                self.szz[i * m + j] += z[i] * z[j];
                self.sgg[i * m + j] += g[i] * g[j];
            }
        }
    }

    fn add(&mut self, o: &Moments) {
        self.n += o.n;
        for (a, b) in self.sz.iter_mut().zip(&o.sz) {
            *a += b;
        }
        for (a, b) in self.sg.iter_mut().zip(&o.sg) {
            *a += b;
        }
        for (a, b) in self.szz.iter_mut().zip(&o.szz) {
            *a += b;
        }
        for (a, b) in self.sgg.iter_mut().zip(&o.sgg) {
            *a += b;
        }
    }

    fn cov(n: usize, s: &[f64], ss: &[f64]) -> Vec<f64> {
        let m = s.len();
        let nf = n as f64;
        let mut c = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                c[i * m + j] = (ss[i * m + j] - s[i] * s[j] / nf) / (nf - 1.0);
            }
        }
        c
    }

    fn cov_z(&self) -> Vec<f64> {
        Self::cov(self.n, &self.sz, &self.szz)
    }

    fn cov_g(&self) -> Vec<f64> {
        Self::cov(self.n, &self.sg, &self.sgg)
    }
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .enumerate()
        .fold((0.0, 0), |acc, (k, v)| if v > acc.0 { (v, k) } else { acc })
}

/// Monte Carlo check of the Gaussian decomposition at each small `t`.
///
/// Paths use Euler–Maruyama with step `min(cfg.dt, t / MIN_STEPS)`; the
/// Gaussian part `G_t = Σ_k (A₁ + (t - t_{k+1}) C₁) σ ΔW_k` is accumulated
/// from the same increments, so `Cov_MC(Z) - Cov_MC(G)` estimates
/// `Cov(Z_t) - Σ_G(t)` with most of the sampling noise cancelled.
pub fn validate_gaussian_approx(
    p: &PotentialSpec,
    z0: &PhaseState,
    t_grid: &[f64],
    cfg: &SimConfig,
) -> Result<ApproxReport> {
    if t_grid.is_empty() {
        return Err(invalid("t_grid must be nonempty"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t <= 0.5)) {
        return Err(invalid("t_grid must lie in (0, 0.5]"));
    }
    if z0.dim() != p.dim {
        return Err(invalid("initial state dimension does not match the potential"));
    }
    let d = p.dim;
    let m = 2 * d;
    let np = cfg.n_paths;
    if np < 2 * BATCHES {
        return Err(invalid(format!("need at least {} paths", 2 * BATCHES)));
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let n_steps = ((t / cfg.dt).ceil() as usize).max(MIN_STEPS);
        let h = t / n_steps as f64;
        let sq = h.sqrt();
        let domain = Domain::PRIMARY.child(0x6761_7573 + ti as u64);

        // deterministic centre: the noise-free Euler path
        let mut centre = z0.to_vec();
        let mut w = Work::new(d);
        let zero = vec![0.0; d];
        for _ in 0..n_steps {
            em_step_in_place(p, &mut centre, h, cfg.sigma, &zero, &mut w);
        }

        let batch = np.div_ceil(BATCHES);
        let batches: Vec<Moments> = parallel::map_chunks(cfg.threads, np, batch, |lo, hi| {
            let mut acc = Moments::new(m);
            let mut w = Work::new(d);
            let mut z = vec![0.0; m];
            let mut g = vec![0.0; m];
            let mut dw = vec![0.0; d];
            for path in lo..hi {
                let mut rng = substream(cfg.master_seed, domain, path as u64);
                z.copy_from_slice(&z0.to_vec());
                g.iter_mut().for_each(|c| *c = 0.0);
                for k in 0..n_steps {
                    for c in dw.iter_mut() {
                        *c = sq * rng.sample::<f64, _>(StandardNormal);
                    }
                    em_step_in_place(p, &mut z, h, cfg.sigma, &dw, &mut w);
                    let u = t - (k + 1) as f64 * h;
                    for i in 0..d {
                        g[i] += u * cfg.sigma * dw[i];
                        g[d + i] += (1.0 - u) * cfg.sigma * dw[i];
                    }
                }
                if z.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NumericalBlowup { path, time: t });
                }
                let zc: Vec<f64> = z.iter().zip(&centre).map(|(a, b)| a - b).collect();
                acc.push(&zc, &g);
            }
            Ok::<_, Error>(acc)
        })?;

        let mut total = Moments::new(m);
        for b in &batches {
            total.add(b);
        }
        let cz = total.cov_z();
        let cg = total.cov_g();
        let sigma_g = gaussian_part_cov(t, cfg.sigma, d)?;
        let (dev_norm, arg) = sup_norm_diff(&cz, &cg);
        let (raw_dev, _) = sup_norm_diff(&cz, &sigma_g);
        let batch_devs = batches.iter().map(|b| b.cov_z()[arg] - b.cov_g()[arg]);
        let dev_se = stats::mean_se(batch_devs).se;

        let nf = total.n as f64;
        let mean: Vec<f64> = total.sz.iter().zip(&centre).map(|(s, c)| c + s / nf).collect();
        let mean_se: Vec<f64> = (0..m).map(|i| (cz[i * m + i] / nf).sqrt()).collect();
        rows.push(ApproxRow {
            t,
            dt: h,
            n_paths: np,
            dev_norm,
            dev_se,
            raw_dev,
            predicted: cfg.sigma * cfg.sigma * t.powi(4),
            approx: GaussianApprox { t, mean, mean_se, cov: sigma_g, error_bound: raw_dev / (t * t) },
        });
    }
    let fit = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.dev_norm.max(f64::MIN_POSITIVE).ln()).collect();
        stats::ols(&x, &y)
    } else {
        None
    };
    let pass = fit.is_some_and(|f| f.slope >= SLOPE_THRESHOLD);
    Ok(ApproxReport { rows, fit, slope_threshold: SLOPE_THRESHOLD, pass })
}

/// The weighted event `ρ_r(Z¹, Z²) < δ` with both points in `B(0, radius)`.
#[derive(Debug, Clone)]
pub struct RhoEvent {
    pub lp: LyapunovParams,
    pub r: f64,
    pub radius: f64,
}

/// Per-pair distances of two independent copies at time `t`.
#[derive(Debug, Clone)]
pub struct CouplingSamples {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub t: f64,
    pub euclidean: Vec<f64>,
    /// `ρ_r` bound per pair, `+inf` when a point leaves the ball.
    pub rho_r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbEstimate {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub t: f64,
    pub delta: f64,
    pub euclidean: ProportionCi,
    pub rho_r: Option<ProportionCi>,
    /// Some event had no successes; its lower bound is 0.
    pub inconclusive: bool,
}

impl CouplingSamples {
    /// Wilson 95% intervals for `|Z¹ - Z²| < δ` and the weighted event.
    pub fn estimate(&self, delta: f64) -> Result<ProbEstimate> {
        if !(delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        let n = self.euclidean.len() as u64;
        let count = |xs: &[f64]| xs.iter().filter(|&&x| x < delta).count() as u64;
        let euclidean = stats::wilson(count(&self.euclidean), n, stats::Z95);
        let rho_r = self.rho_r.as_ref().map(|r| stats::wilson(count(r), n, stats::Z95));
        let inconclusive = euclidean.successes == 0 || rho_r.is_some_and(|c| c.successes == 0);
        Ok(ProbEstimate { z1: self.z1.clone(), z2: self.z2.clone(), t: self.t, delta, euclidean, rho_r, inconclusive })
    }
}

/// Simulate `cfg.n_paths` independent pairs from `(z1, z2)` to time `t`.
pub fn coupling_distances(
    p: &PotentialSpec,
    z1: &PhaseState,
    z2: &PhaseState,
    t: f64,
    cfg: &SimConfig,
    rho: Option<&RhoEvent>,
) -> Result<CouplingSamples> {
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    if z1.dim() != p.dim || z2.dim() != p.dim {
        return Err(invalid("initial state dimension does not match the potential"));
    }
    let mut cfg = cfg.clone();
    cfg.t_final = t;
    cfg.dt = cfg.dt.min(t);
    let run = |z: &PhaseState, tag: u64| {
        let v = z.to_vec();
        let opts = EnsembleOptions { track_tangent: false, domain: Domain::PRIMARY.child(tag) };
        simulate_paths(p, &cfg, &[t], opts, |_| v.clone())
    };
    let e1 = run(z1, 0x636f_7570_0001)?;
    let e2 = run(z2, 0x636f_7570_0002)?;
    let n = cfg.n_paths;
    let euclidean: Vec<f64> = (0..n).map(|i| crate::metric::euclidean(e1.state(i, 0), e2.state(i, 0))).collect();
    let rho_r = match rho {
        None => None,
        Some(ev) => Some(parallel::map_indexed(cfg.threads, n, |i| {
            let (a, b) = (e1.state(i, 0), e2.state(i, 0));
            if linalg::norm(a) > ev.radius || linalg::norm(b) > ev.radius {
                Ok::<_, Error>(f64::INFINITY)
            } else {
                Ok(rho_upper(a, b, p, &ev.lp, ev.r).value)
            }
        })?),
    };
    Ok(CouplingSamples { z1: z1.to_vec(), z2: z2.to_vec(), t, euclidean, rho_r })
}

/// Coupling probability of independent copies started at `z1` and `z2`.
pub fn coupling_probability(
    p: &PotentialSpec,
    z1: &PhaseState,
    z2: &PhaseState,
    t: f64,
    delta: f64,
    cfg: &SimConfig,
    rho: Option<&RhoEvent>,
) -> Result<ProbEstimate> {
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    coupling_distances(p, z1, z2, t, cfg, rho)?.estimate(delta)
}

/// CSV columns `event, z1_*, z2_*, t, delta, p_hat, ci_lo, ci_hi`.
pub fn write_prob_csv<W: std::io::Write>(rows: &[ProbEstimate], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let m = rows.first().map_or(2, |r| r.z1.len());
    let mut header = vec!["event".to_string()];
    header.extend((1..=m).map(|i| format!("z1_{i}")));
    header.extend((1..=m).map(|i| format!("z2_{i}")));
    header.extend(["t", "delta", "p_hat", "ci_lo", "ci_hi"].map(String::from));
    wr.write_record(&header)?;
    for r in rows {
        let events = std::iter::once(("euclidean", r.euclidean)).chain(r.rho_r.map(|c| ("rho_r", c)));
        for (name, ci) in events {
            let mut rec = vec![name.to_string()];
            rec.extend(r.z1.iter().chain(&r.z2).map(|c| fmt_f64(*c)));
            rec.extend([r.t, r.delta, ci.p_hat, ci.lo, ci.hi].map(fmt_f64));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Constants `(C, k, m)` of the closed-form coupling bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaConsts {
    pub c: f64,
    pub k: f64,
    pub m: f64,
}

/// `C δ² t⁻² exp(-k m² / t³) - 8 exp(-δ² / (16 C t⁵))`, clamped to `[0, 1]`.
/// For comparison with Monte Carlo estimates only.
pub fn alpha_reference_bound(t: f64, delta: f64, radius: f64, consts: AlphaConsts) -> Result<f64> {
    if !(t > 0.0 && delta > 0.0 && radius > 0.0) {
        return Err(invalid("t, delta and R must be positive"));
    }
    let AlphaConsts { c, k, m } = consts;
    let first = c * delta * delta / (t * t) * (-k * m * m / t.powi(3)).exp();
    let tail = 8.0 * (-delta * delta / (16.0 * c * t.powi(5))).exp();
    let a = first - tail;
    Ok(if a.is_nan() { 0.0 } else { a.clamp(0.0, 1.0) })
}

/// Largest entrywise gap between `J_{s,t}` integrated directly and
/// `J_{0,t} J_{0,s}⁻¹` over `cfg.n_paths` Euler paths from `z0`.
pub fn flow_identity_residual(p: &PotentialSpec, z0: &PhaseState, s: f64, t: f64, cfg: &SimConfig) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(invalid("need 0 < s < t"));
    }
    if z0.dim() != p.dim {
        return Err(invalid("initial state dimension does not match the potential"));
    }
    let d = p.dim;
    let n = 2 * d;
    let n_s = (s / cfg.dt).ceil().max(1.0) as usize;
    let n_t = ((t - s) / cfg.dt).ceil().max(1.0) as usize;
    let (hs, ht) = (s / n_s as f64, (t - s) / n_t as f64);
    let domain = Domain::PRIMARY.child(0x666c_6f77);
    let residuals = parallel::map_indexed(cfg.threads, cfg.n_paths, |path| {
        let mut rng = substream(cfg.master_seed, domain, path as u64);
        let mut w = Work::new(d);
        let mut z = z0.to_vec();
        let mut j0 = linalg::identity(n);
        let mut dw = vec![0.0; d];
        let mut advance = |h: f64, z: &mut Vec<f64>, js: &mut [&mut Vec<f64>], w: &mut Work| {
            for j in js.iter_mut() {
                tangent_step_in_place(p, &z[..d], j, h, w);
            }
            for c in dw.iter_mut() {
                *c = h.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            em_step_in_place(p, z, h, cfg.sigma, &dw, w);
        };
        for _ in 0..n_s {
            advance(hs, &mut z, &mut [&mut j0], &mut w);
        }
        let j0s = j0.clone();
        let mut jst = linalg::identity(n);
        for _ in 0..n_t {
            advance(ht, &mut z, &mut [&mut j0, &mut jst], &mut w);
        }
        let inv = linalg::inverse(&j0s, n).ok_or_else(|| invalid("singular tangent flow"))?;
        let composed = linalg::matmul_new(&j0, &inv, n);
        Ok::<_, Error>(linalg::max_abs_diff(&jst, &composed))
    })?;
    Ok(residuals.into_iter().fold(0.0, f64::max))
}
