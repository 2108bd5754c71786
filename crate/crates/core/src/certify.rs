//! Harris-type certificate `W_ρ(P_t μ, P_t ν) <= C e^{-λt} W_ρ(μ, ν)` built
//! from three regional contractions of the metric `d` at a common time
//! `T_cert`, plus an empirical decay-rate measurement for comparison.
//!
//! Stages, in order: `hypotheses`, `lyapunov`, `gradient`, `small`, `far`,
//! `mid`. Every constant that enters the final `(C, λ)` is recorded.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{fmt_f64, simulate_paths, EnsembleOptions, PhaseState, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::gamma2::{self, QuadraticObservable};
use crate::linalg;
use crate::lyapunov::{self, derive_params, ln_weight_slice, LyapunovParams, SlackForm};
use crate::malliavin::CouplingSamples;
use crate::metric::{self, rho_upper, MetricParams};
use crate::parallel;
use crate::potentials::{check_hypotheses, PotentialSpec};
use crate::rng::Domain;
use crate::stats::{self, LinearFit};

/// Contraction factor on `{ρ > K}` before mixing with the metric weight.
pub const ALPHA_FAR: f64 = 0.5;
/// Factor on `{ρ_r < δ}`.
pub const GAMMA_SMALL: f64 = 0.75;
const FAR_SEARCH_MAX: f64 = 1e3;

/// Knobs of [`assemble`] beyond the simulation config.
#[derive(Debug, Clone, Serialize)]
pub struct CertifyOptions {
    /// Weight exponent of `ρ_r`; `None` picks `λ_lo / (2 λ_hi)`.
    pub r: Option<f64>,
    pub hypothesis_radius: f64,
    pub hypothesis_grid: usize,
    /// Half-width and points per axis of the drift and growth grids.
    pub grid_half_width: f64,
    pub grid_n: usize,
    pub drift_times: Vec<f64>,
    pub gradient_t: f64,
    pub gradient_observables: usize,
    /// Paths per start point in the coupling stage.
    pub coupling_pairs: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            r: None,
            hypothesis_radius: 10.0,
            hypothesis_grid: 201,
            grid_half_width: 2.0,
            grid_n: 5,
            drift_times: vec![0.25, 0.5, 1.0],
            gradient_t: 1.0,
            gradient_observables: 4,
            coupling_pairs: 200_000,
        }
    }
}

fn stage_err(stage: &str, message: impl Into<String>) -> Error {
    Error::CertificateFailure { stage: stage.to_string(), message: message.into() }
}

/// Smallest admissible time: `κ e^{-βt/4} <= r` and `3 e^{-t/3} <= 1/4`.
pub fn small_region_min_t(lp: &LyapunovParams, r: f64) -> f64 {
    (4.0 * (lp.kappa / r).ln() / lp.beta).max(3.0 * 12f64.ln())
}

/// `C_L = C(a*) exp(4 a* (2 + c3) / β)`, the growth of `P_t L` entering the
/// gradient bound.
pub fn c_lyapunov(lp: &LyapunovParams) -> f64 {
    lp.c_of_a(lp.a_star) * (4.0 * lp.a_star * (2.0 + lp.c3) / lp.beta).exp()
}

/// `sqrt(2 C_M (1 + C_L))`
pub fn c_gradient(cm: f64, lp: &LyapunovParams) -> f64 {
    (2.0 * cm * (1.0 + c_lyapunov(lp))).sqrt()
}

/// Largest admissible `δ = 1 / (2 (C + 2))`.
pub fn delta_max(cm: f64, lp: &LyapunovParams) -> f64 {
    1.0 / (2.0 * (c_gradient(cm, lp) + 2.0))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmallReport {
    pub factor: f64,
    pub min_t: f64,
    pub delta_max: f64,
}

/// The factor `3/4` on `{ρ_r < δ}`, once `t` and `δ` are admissible.
pub fn small_region_factor(cm: f64, mp: &MetricParams, t: f64) -> Result<SmallReport> {
    let min_t = small_region_min_t(&mp.lp, mp.r);
    if t < min_t {
        return Err(Error::PreconditionViolation {
            message: format!("t = {t} is below the admissible time"),
            min_t: Some(min_t),
        });
    }
    let dmax = delta_max(cm, &mp.lp);
    if mp.delta > dmax {
        return Err(Error::PreconditionViolation {
            message: format!("delta = {} exceeds 1/(2(C+2)) = {dmax}", mp.delta),
            min_t: None,
        });
    }
    Ok(SmallReport { factor: GAMMA_SMALL, min_t, delta_max: dmax })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FarReport {
    /// `e^{-βt/4}`
    pub xi: f64,
    pub radius: f64,
    pub c1_prop: f64,
    pub k: f64,
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// Radius `R` beyond which `C L^*(|z|)^ξ <= α L_*(|z|)`, then
/// `C₁ = C R L^*(R)` and `K = 4 C₁`.
pub fn far_region_factor(lp: &LyapunovParams, c_drift: f64, t: f64, alpha: f64) -> Result<FarReport> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(invalid("alpha_target must lie in [1/2, 1)"));
    }
    if !(c_drift >= 1.0) {
        return Err(invalid("drift constant must be at least 1"));
    }
    let xi = (-lp.beta * t / 4.0).exp();
    // g(R) >= 0 iff the far inequality holds at radius R; g is increasing
    // once positive since ξ λ_hi < λ_lo is required for a root
    let g = |s: f64| alpha.ln() + lp.ln_lower(s) - c_drift.ln() - xi * lp.ln_upper(s);
    if !(g(FAR_SEARCH_MAX) >= 0.0) || xi * lp.lambda_hi >= lp.lambda_lo {
        return Err(stage_err("far", format!("no far radius within |z| <= {FAR_SEARCH_MAX} at t = {t}")));
    }
    let radius = if g(0.0) >= 0.0 { 0.0 } else { bisect(g, 0.0, FAR_SEARCH_MAX) };
    let radius = radius.max(1.0);
    let ln_c1 = c_drift.ln() + radius.ln() + lp.ln_upper(radius);
    let c1_prop = ln_c1.exp();
    if !c1_prop.is_finite() {
        return Err(stage_err("far", "far-region constant overflows"));
    }
    Ok(FarReport { xi, radius, c1_prop, k: 4.0 * c1_prop })
}

/// `0.75 + 0.25 / (1 + β_w K)`: the worst case of
/// `(1 + β_w (C₁ + ρ/2)) / (1 + β_w ρ)` over `ρ >= K = 4 C₁`.
pub fn far_gamma(beta_w: f64, k: f64) -> f64 {
    0.75 + 0.25 / (1.0 + (beta_w.ln() + k.ln()).exp())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MidRadius {
    /// Outside `B(0, R)`, `ρ_r(z, ·) >= δ` forces `ρ > 4 C₁`.
    pub inner: f64,
    /// `R' = R + ln(1 + 8 C₁ 2aλ_lo R / L_*(R)) / (2aλ_lo R)`, so that
    /// `∫_R^{R'} L_* >= 8 C₁`.
    pub outer: f64,
}

/// Radii of the middle region for weight exponent `r` and threshold `δ`.
pub fn mid_region_radius(lp: &LyapunovParams, r: f64, delta: f64, c1_prop: f64) -> Result<MidRadius> {
    let a = lp.a_star;
    let den = a * (lp.lambda_lo - r * lp.lambda_hi);
    if !(den > 0.0) {
        return Err(stage_err("mid", format!("r = {r} leaves no room: λ_lo <= r λ_hi")));
    }
    let num = 8f64.ln() + c1_prop.ln() - delta.ln() + 2.0 * r * a * lp.b_hi;
    let inner = (num.max(0.0) / den).sqrt().max(1.0);
    let slope = 2.0 * a * lp.lambda_lo * inner;
    let x = (8.0 * c1_prop * slope).ln() - lp.ln_lower(inner);
    let softplus = if x > 30.0 { x } else { x.exp().ln_1p() };
    Ok(MidRadius { inner, outer: inner + softplus / slope })
}

/// `1 - a/4`, given the coupling lower bound `a` and the cap
/// `β_w <= a / (8 C_*)`.
pub fn mid_region_factor(a: f64, beta_w: f64, c_star: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(stage_err("mid", "coupling lower bound is zero; increase the pair count or t"));
    }
    if beta_w > a / (8.0 * c_star) * (1.0 + 1e-12) {
        return Err(Error::PreconditionViolation {
            message: format!("beta_w = {beta_w} exceeds a/(8 C_*) = {}", a / (8.0 * c_star)),
            min_t: None,
        });
    }
    Ok(1.0 - a / 4.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct HarrisCertificate {
    pub potential: String,
    pub lp: LyapunovParams,
    pub c_m: f64,
    pub mp: MetricParams,
    pub drift_form: String,
    pub drift_max_ratio: f64,
    pub gradient_min_margin: f64,
    pub c_drift: f64,
    pub c_growth: f64,
    pub far_radius: f64,
    pub c1_prop: f64,
    pub k: f64,
    pub mid_inner_radius: f64,
    pub r_region: f64,
    pub a_coupling: f64,
    pub coupling_successes: u64,
    pub coupling_pairs: u64,
    pub c_rho: f64,
    pub gamma_far: f64,
    pub gamma_small: f64,
    pub gamma_mid: f64,
    pub t_cert: f64,
    pub c_final: f64,
    pub ln_c_final: f64,
    pub lambda_final: f64,
    pub master_seed: u64,
    pub n_paths: usize,
}

impl HarrisCertificate {
    pub fn gamma(&self) -> f64 {
        self.gamma_far.max(self.gamma_small).max(self.gamma_mid)
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("potential", self.potential.clone());
        kv("status", "certified".into());
        kv("confidence", "lower 95% coupling bound, 99% upper bounds on expectations".into());
        kv("master_seed", self.master_seed.to_string());
        kv("n_paths", self.n_paths.to_string());
        kv("beta", fmt_f64(self.lp.beta));
        kv("a_star", fmt_f64(self.lp.a_star));
        kv("kappa", fmt_f64(self.lp.kappa));
        kv("lambda_lo", fmt_f64(self.lp.lambda_lo));
        kv("lambda_hi", fmt_f64(self.lp.lambda_hi));
        kv("b_hi", fmt_f64(self.lp.b_hi));
        kv("c_m", fmt_f64(self.c_m));
        kv("r", fmt_f64(self.mp.r));
        kv("delta", fmt_f64(self.mp.delta));
        kv("beta_w", fmt_f64(self.mp.beta_w));
        kv("drift_form", self.drift_form.clone());
        kv("drift_max_ratio", fmt_f64(self.drift_max_ratio));
        kv("gradient_min_margin", fmt_f64(self.gradient_min_margin));
        kv("c_drift", fmt_f64(self.c_drift));
        kv("c_growth", fmt_f64(self.c_growth));
        kv("far_radius", fmt_f64(self.far_radius));
        kv("c1_prop", fmt_f64(self.c1_prop));
        kv("k", fmt_f64(self.k));
        kv("mid_inner_radius", fmt_f64(self.mid_inner_radius));
        kv("r_region", fmt_f64(self.r_region));
        kv("a_coupling", fmt_f64(self.a_coupling));
        kv("coupling_successes", self.coupling_successes.to_string());
        kv("coupling_pairs", self.coupling_pairs.to_string());
        kv("c_rho", fmt_f64(self.c_rho));
        kv("gamma_far", fmt_f64(self.gamma_far));
        kv("gamma_small", fmt_f64(self.gamma_small));
        kv("gamma_mid", fmt_f64(self.gamma_mid));
        kv("t_cert", fmt_f64(self.t_cert));
        kv("ln_c_final", fmt_f64(self.ln_c_final));
        kv("c_final", fmt_f64(self.c_final));
        kv("lambda_final", fmt_f64(self.lambda_final));
        s
    }
}

/// `sup_z UCB E[L(Z_t) ‖J_{0,t}‖] / L(z)^{e^{-βt/4}}` over the grid at
/// each of `times`.
fn growth_ratios(
    p: &PotentialSpec,
    lp: &LyapunovParams,
    grid: &[PhaseState],
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    let n = 2 * p.dim;
    let mut sup = vec![0.0f64; times.len()];
    for (gi, z) in grid.iter().enumerate() {
        let z0 = z.to_vec();
        let opts = EnsembleOptions { track_tangent: true, domain: Domain::PRIMARY.child(0x6772_0000 + gi as u64) };
        let ens = simulate_paths(p, cfg, times, opts, |_| z0.clone())?;
        let ln_l0 = ln_weight_slice(&z0, p, lp);
        for (ti, &t) in times.iter().enumerate() {
            let xi = (-lp.beta * t / 4.0).exp();
            let est = stats::mean_se((0..ens.n_paths).map(|i| {
                let ln_l = ln_weight_slice(ens.state(i, ti), p, lp).min(lyapunov::LN_SATURATION);
                ln_l.exp() * linalg::operator_norm(ens.tangent(i, ti).unwrap(), n)
            }));
            sup[ti] = sup[ti].max(est.ucb99() / (xi * ln_l0).exp());
        }
    }
    Ok(sup)
}

/// Start points of the coupling stage: `(±R', 0)` and `(0, R')` in the
/// first coordinate pair, giving an antipodal and two orthogonal pairs.
fn coupling_starts(dim: usize, radius: f64) -> Vec<PhaseState> {
    let mut pts = Vec::new();
    for (cx, cv) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)] {
        let mut s = PhaseState::zeros(dim);
        s.x[0] = cx * radius;
        s.v[0] = cv * radius;
        pts.push(s);
    }
    pts
}

/// Run the full pipeline.
pub fn assemble(p: &PotentialSpec, cfg: &SimConfig, opts: &CertifyOptions) -> Result<HarrisCertificate> {
    cfg.validate(p)?;
    let d = p.dim;

    // hypotheses
    let hyp = check_hypotheses(p, opts.hypothesis_radius, opts.hypothesis_grid)?;
    if !hyp.pass() {
        return Err(stage_err("hypotheses", format!("potential `{}` violates its declared constants: {hyp:?}", p.name)));
    }

    // lyapunov
    let lp = derive_params(p).map_err(|e| stage_err("lyapunov", e.to_string()))?;
    let grid = lyapunov::square_grid(d, opts.grid_half_width, opts.grid_n);
    let mut dcfg = cfg.clone();
    dcfg.scheme = crate::dynamics::Scheme::EulerMaruyama;
    let drift = lyapunov::verify_drift_times(p, &lp, &opts.drift_times, &grid, &dcfg)?;
    let drift_form = match drift.form_passed {
        Some(f) if !drift.inconclusive => f,
        _ => {
            return Err(stage_err(
                "lyapunov",
                format!("drift inequality fails (max ratio {:.4e})", drift.max_ratio()),
            ))
        }
    };

    // gradient
    let cm = gamma2::c_m(p.hess_bound);
    let mut orng = ChaCha8Rng::seed_from_u64(cfg.master_seed ^ 0x6772_6164);
    let fns: Vec<QuadraticObservable> =
        (0..opts.gradient_observables).map(|_| QuadraticObservable::random(d, &mut orng)).collect();
    let ggrid = lyapunov::square_grid(d, 1.0, 3);
    let grad = gamma2::verify_gradient_bound(p, opts.gradient_t, &fns, &ggrid, &dcfg)?;
    if !grad.pass {
        return Err(stage_err("gradient", "gradient bound fails at some grid point"));
    }
    let gradient_min_margin = grad.rows.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min);

    // small: fixes r, δ and T_cert
    let r = opts.r.unwrap_or(lp.lambda_lo / (2.0 * lp.lambda_hi));
    if !(r > 0.0 && r <= 1.0) {
        return Err(stage_err("small", format!("r = {r} outside (0, 1]")));
    }
    let delta = delta_max(cm, &lp);
    let t_cert = small_region_min_t(&lp, r).ceil();
    // provisional weight; the mid stage fixes β_w
    let provisional = MetricParams::new(lp.clone(), r, delta, 0.5).map_err(|e| stage_err("small", e.to_string()))?;
    let small = small_region_factor(cm, &provisional, t_cert).map_err(|e| stage_err("small", e.to_string()))?;

    // far
    let mut gcfg = dcfg.clone();
    gcfg.t_final = t_cert;
    let n_times = t_cert as usize;
    let times: Vec<f64> = (1..=n_times).map(|i| i as f64).collect();
    let ratios = growth_ratios(p, &lp, &grid, &times, &gcfg)?;
    let c_drift = ratios.last().copied().unwrap_or(1.0).max(1.0);
    let c_growth = ratios.iter().copied().fold(1.0, f64::max);
    let far = far_region_factor(&lp, c_drift, t_cert, ALPHA_FAR)?;

    // mid
    let radii = mid_region_radius(&lp, r, delta, far.c1_prop)?;
    let mut ccfg = cfg.clone();
    ccfg.t_final = t_cert;
    ccfg.dt = ccfg.dt.min(t_cert);
    ccfg.n_paths = opts.coupling_pairs;
    let starts = coupling_starts(d, radii.outer);
    let mut finals = Vec::with_capacity(starts.len());
    for (si, z) in starts.iter().enumerate() {
        let z0 = z.to_vec();
        let eo = EnsembleOptions { track_tangent: false, domain: Domain::PRIMARY.child(0x6d69_6400 + si as u64) };
        finals.push(simulate_paths(p, &ccfg, &[t_cert], eo, |_| z0.clone())?);
    }
    let zero = vec![0.0; 2 * d];
    let mut c_rho = 0.0f64;
    for ens in &finals {
        let rhos = parallel::map_indexed(cfg.threads, ens.n_paths, |i| {
            Ok::<_, Error>(rho_upper(&zero, ens.state(i, 0), p, &lp, 1.0).value)
        })?;
        c_rho = c_rho.max(stats::mean_se(rhos).ucb99());
    }
    let mut a_coupling = f64::INFINITY;
    let (mut succ, mut total) = (0, 0);
    for i in 0..finals.len() {
        for j in (i + 1)..finals.len() {
            let (e1, e2) = (&finals[i], &finals[j]);
            let n = e1.n_paths;
            let rho_r = parallel::map_indexed(cfg.threads, n, |k| {
                let (a, b) = (e1.state(k, 0), e2.state(k, 0));
                if linalg::norm(a) > radii.outer || linalg::norm(b) > radii.outer {
                    Ok::<_, Error>(f64::INFINITY)
                } else {
                    Ok(rho_upper(a, b, p, &lp, r).value)
                }
            })?;
            let euclidean = (0..n).map(|k| metric::euclidean(e1.state(k, 0), e2.state(k, 0))).collect();
            let samples = CouplingSamples {
                z1: starts[i].to_vec(),
                z2: starts[j].to_vec(),
                t: t_cert,
                euclidean,
                rho_r: Some(rho_r),
            };
            let ci = samples.estimate(delta / 2.0)?.rho_r.unwrap();
            if ci.lo < a_coupling {
                a_coupling = ci.lo;
                succ = ci.successes;
                total = ci.n;
            }
        }
    }
    if !(a_coupling > 0.0) {
        return Err(Error::CertificateFailure {
            stage: "mid".into(),
            message: format!("coupling inconclusive: {succ} successes in {total} pairs; increase pairs"),
        });
    }
    let beta_w = (a_coupling / (8.0 * c_rho)).min(0.5);
    let gamma_mid = mid_region_factor(a_coupling, beta_w, c_rho)?;
    let gamma_far = far_gamma(beta_w, far.k);
    let mp = MetricParams::new(lp.clone(), r, delta, beta_w).map_err(|e| stage_err("mid", e.to_string()))?;

    let gamma = gamma_far.max(small.factor).max(gamma_mid);
    let lambda_final = -gamma.ln() / t_cert;
    let ln_c_final = (1.0 / (delta * beta_w)).ln_1p() + c_growth.ln() - gamma.ln();
    Ok(HarrisCertificate {
        potential: p.name.clone(),
        lp,
        c_m: cm,
        mp,
        drift_form: drift_form.as_str().to_string(),
        drift_max_ratio: drift.max_ratio() / drift.slack(SlackForm::ConstantCa),
        gradient_min_margin,
        c_drift,
        c_growth,
        far_radius: far.radius,
        c1_prop: far.c1_prop,
        k: far.k,
        mid_inner_radius: radii.inner,
        r_region: radii.outer,
        a_coupling,
        coupling_successes: succ,
        coupling_pairs: total,
        c_rho,
        gamma_far,
        gamma_small: small.factor,
        gamma_mid,
        t_cert,
        c_final: ln_c_final.exp(),
        ln_c_final,
        lambda_final,
        master_seed: cfg.master_seed,
        n_paths: cfg.n_paths,
    })
}

/// Initial law of a decay run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Dirac { z: Vec<f64> },
    /// Independent normal coordinates around `mean`.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl InitialLaw {
    fn sampler(&self, master_seed: u64, domain: Domain) -> impl Fn(usize) -> Vec<f64> + Sync + Send + '_ {
        move |i| match self {
            InitialLaw::Dirac { z } => z.clone(),
            InitialLaw::Gaussian { mean, std } => {
                use rand::Rng;
                let mut rng = crate::rng::substream(master_seed, domain.child(0x696e_6974), i as u64);
                mean.iter().map(|m| m + std * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            InitialLaw::Dirac { z } => z.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub ground: String,
    /// `λ̂ = -slope` of `ln W` against `t`.
    pub rate: f64,
    /// 95% half-width.
    pub ci: f64,
    pub window: usize,
    pub inconclusive: bool,
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub ground: String,
    pub w1: f64,
    pub noise_floor: f64,
    pub in_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCurve {
    pub points: Vec<DecayPoint>,
    pub fits: Vec<DecayFit>,
}

impl DecayCurve {
    pub fn fit(&self, ground: &str) -> Option<&DecayFit> {
        self.fits.iter().find(|f| f.ground == ground)
    }

    /// CSV columns `t, ground, w1, noise_floor, in_window`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "ground", "w1", "noise_floor", "in_window"])?;
        for pt in &self.points {
            wr.write_record([
                fmt_f64(pt.t),
                pt.ground.clone(),
                fmt_f64(pt.w1),
                fmt_f64(pt.noise_floor),
                pt.in_window.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Noise floor multiple a point must exceed to enter the fit window.
pub const FLOOR_FACTOR: f64 = 3.0;

/// Fit `ln W = c - λ t` over the leading run of points above
/// `FLOOR_FACTOR x` noise floor.
pub fn fit_decay(ground: &str, t: &[f64], w: &[f64], floor: &[f64]) -> (DecayFit, Vec<bool>) {
    let mut in_window = vec![false; t.len()];
    let mut k = 0;
    while k < t.len() && w[k] > FLOOR_FACTOR * floor[k] && w[k] > 0.0 {
        in_window[k] = true;
        k += 1;
    }
    let fit = if k >= 3 {
        let ys: Vec<f64> = w[..k].iter().map(|v| v.ln()).collect();
        stats::ols(&t[..k], &ys)
    } else {
        None
    };
    let df = DecayFit {
        ground: ground.to_string(),
        rate: fit.map_or(f64::NAN, |f| -f.slope),
        ci: fit.map_or(f64::NAN, |f| f.slope_ci),
        window: k,
        inconclusive: fit.is_none(),
        fit,
    };
    (df, in_window)
}

/// Empirical `W₁(P_t μ_a, P_t μ_b)` on `t_grid` for each ground metric, with
/// the noise floor `W₁(P_t μ_a, P_t μ_a')` from an independent resample.
pub fn measure_decay(
    p: &PotentialSpec,
    mu_a: &InitialLaw,
    mu_b: &InitialLaw,
    t_grid: &[f64],
    cfg: &SimConfig,
    grounds: &[metric::GroundMetric],
    mp: Option<&MetricParams>,
) -> Result<DecayCurve> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("t_grid must be nonempty and strictly increasing"));
    }
    if mu_a.len() != 2 * p.dim || mu_b.len() != 2 * p.dim {
        return Err(invalid("initial law dimension does not match the potential"));
    }
    if grounds.iter().any(|g| *g != metric::GroundMetric::Euclidean) && mp.is_none() {
        return Err(invalid("weighted ground metrics need metric parameters"));
    }
    let mut cfg = cfg.clone();
    cfg.t_final = cfg.t_final.max(*t_grid.last().unwrap());
    cfg.dt = cfg.dt.min(cfg.t_final);
    let run = |law: &InitialLaw, tag: u64| {
        let domain = Domain::PRIMARY.child(tag);
        let opts = EnsembleOptions { track_tangent: false, domain };
        simulate_paths(p, &cfg, t_grid, opts, law.sampler(cfg.master_seed, domain))
    };
    let ea = run(mu_a, 0x6465_6361_0001)?;
    let eb = run(mu_b, 0x6465_6361_0002)?;
    let ea2 = run(mu_a, 0x6465_6361_0003)?;
    let m = 2 * p.dim;
    let flat_mp = MetricParams::new(LyapunovParams::unweighted(), 1.0, 1.0, 0.5)?;
    let mp = mp.unwrap_or(&flat_mp);

    let mut points = Vec::new();
    let mut fits = Vec::new();
    for &g in grounds {
        let mut ws = Vec::with_capacity(t_grid.len());
        let mut floors = Vec::with_capacity(t_grid.len());
        for ti in 0..t_grid.len() {
            let (a, b, a2) = (ea.samples_at(ti), eb.samples_at(ti), ea2.samples_at(ti));
            let ground = |x: &[f64], y: &[f64]| g.eval(x, y, p, mp);
            ws.push(metric::wasserstein1(&a, &b, m, ground, cfg.threads)?);
            floors.push(metric::wasserstein1(&a, &a2, m, ground, cfg.threads)?);
        }
        let (fit, window) = fit_decay(g.as_str(), t_grid, &ws, &floors);
        for ti in 0..t_grid.len() {
            points.push(DecayPoint {
                t: t_grid[ti],
                ground: g.as_str().to_string(),
                w1: ws[ti],
                noise_floor: floors[ti],
                in_window: window[ti],
            });
        }
        fits.push(fit);
    }
    Ok(DecayCurve { points, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::make_quadratic;

    #[test]
    fn small_region_threshold() {
        let p = make_quadratic(1).unwrap();
        let lp = derive_params(&p).unwrap();
        let r = 0.5 * lp.lambda_lo / lp.lambda_hi;
        let delta = delta_max(23.0, &lp);
        let mp = MetricParams::new(lp.clone(), r, delta, 0.1).unwrap();
        let tmin = small_region_min_t(&lp, r);
        assert_eq!(small_region_factor(23.0, &mp, tmin).unwrap().factor, 0.75);
        match small_region_factor(23.0, &mp, tmin * 0.999) {
            Err(Error::PreconditionViolation { min_t: Some(m), .. }) => assert_eq!(m, tmin),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn far_gamma_limits() {
        assert!((far_gamma(1e-300, 1.0) - 1.0).abs() < 1e-12);
        assert!((far_gamma(1.0, 1e300) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mid_factor_formula() {
        assert!((mid_region_factor(0.2, 0.01, 1.0).unwrap() - 0.95).abs() < 1e-15);
        assert!(matches!(mid_region_factor(0.2, 0.1, 1.0), Err(Error::PreconditionViolation { .. })));
        assert!(matches!(mid_region_factor(0.0, 0.0, 1.0), Err(Error::CertificateFailure { .. })));
    }
}
