//! Lyapunov weights and Monte Carlo verification of the drift inequality
//!
//! ```text
//! E[ exp(a Q(Z_t)) ‖J_{0,t}‖ ] <= slack · exp(a e^{-βt/4} Q(z))
//! ```
//!
//! with `Q(x, v) = |v|^2 + 2U(x) + |x|^2/2 + x·v`.
//!
//! The weight used by the metrics is
//! `L(z) = exp(a_star (|v|^2 + 2U + 2k|x|^2 + k x·v))`. Its radial
//! envelopes are derived from the 2×2 quadratic forms
//! `[[2k, k/2], [k/2, 1]]` (using only `U >= 0`) and
//! `[[M + 2k, k/2], [k/2, 1]]` (using `U(x) <= U(0) + M|x|^2/2` when
//! `∇U(0) = 0`):
//!
//! ```text
//! L_*(s) = exp(a_star λ_lo s^2) <= L(z) <= exp(a_star (λ_hi s^2 + 2 b)) = L^*(s),   s = |z|.
//! ```

use serde::Serialize;

use crate::dynamics::{simulate_ensemble, PhaseState, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::potentials::PotentialSpec;
use crate::stats::{mean_se, MeanEstimate};

/// Exponents above this saturate instead of overflowing.
pub const LN_SATURATION: f64 = 700.0;

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovParams {
    /// `β c1 / 32`, the ceiling on the drift exponent.
    pub a_upper: f64,
    /// Exponent of the weight `L`: `3 a_upper / (8 (3 + M))`.
    pub a_star: f64,
    /// Exponent used when verifying the drift, `0 < a <= a_star`.
    pub a: f64,
    pub k: f64,
    pub beta: f64,
    pub kappa: f64,
    pub hess_bound: f64,
    pub c1: f64,
    pub c3: f64,
    /// Smallest eigenvalue of the lower envelope form.
    pub lambda_lo: f64,
    /// Largest eigenvalue of the upper envelope form.
    pub lambda_hi: f64,
    /// Additive constant `b` of the upper envelope.
    pub b_hi: f64,
    /// `sup_s s L^*(s) / L_*(s)^κ`.
    pub c_kappa: f64,
}

impl LyapunovParams {
    /// `ln L_*(s)`.
    pub fn ln_lower(&self, s: f64) -> f64 {
        self.a_star * self.lambda_lo * s * s
    }

    /// `ln L^*(s)`.
    pub fn ln_upper(&self, s: f64) -> f64 {
        self.a_star * (self.lambda_hi * s * s + 2.0 * self.b_hi)
    }

    /// The slack `C(a) = c1 β / (c1 β - 16 a)`.
    pub fn c_of_a(&self, a: f64) -> f64 {
        self.c1 * self.beta / (self.c1 * self.beta - 16.0 * a)
    }

    /// Copy with a different drift exponent.
    pub fn with_a(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= self.a_star) {
            return Err(invalid(format!("a must lie in (0, {}], got {a}", self.a_star)));
        }
        Ok(LyapunovParams { a, ..self.clone() })
    }

    /// Parameters with a zero weight exponent, so `L ≡ 1`.
    pub fn unweighted() -> Self {
        LyapunovParams {
            a_upper: 0.0,
            a_star: 0.0,
            a: 0.0,
            k: 1.0,
            beta: 1.0,
            kappa: 1.0,
            hess_bound: 0.0,
            c1: 1.0,
            c3: 0.0,
            lambda_lo: 1.0,
            lambda_hi: 1.0,
            b_hi: 0.0,
            c_kappa: 1.0,
        }
    }
}

/// `|v|^2 + 2U(x) + |x|^2/2 + x·v` on a flat `[x, v]` vector.
pub fn q_form_slice(z: &[f64], p: &PotentialSpec) -> f64 {
    let d = z.len() / 2;
    let (x, v) = z.split_at(d);
    linalg::dot(v, v) + 2.0 * p.value(x) + 0.5 * linalg::dot(x, x) + linalg::dot(x, v)
}

pub fn q_form(z: &PhaseState, p: &PotentialSpec) -> f64 {
    q_form_slice(&z.to_vec(), p)
}

/// `ln L(z) = a_star (|v|^2 + 2U + 2k|x|^2 + k x·v)`.
pub fn ln_weight_slice(z: &[f64], p: &PotentialSpec, lp: &LyapunovParams) -> f64 {
    if lp.a_star == 0.0 {
        return 0.0;
    }
    let d = z.len() / 2;
    let (x, v) = z.split_at(d);
    lp.a_star
        * (linalg::dot(v, v) + 2.0 * p.value(x) + 2.0 * lp.k * linalg::dot(x, x) + lp.k * linalg::dot(x, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weight {
    /// `L^r`, or `f64::MAX` when saturated.
    pub value: f64,
    pub ln_value: f64,
    pub saturated: bool,
}

impl Weight {
    pub fn from_ln(ln_value: f64) -> Self {
        let saturated = ln_value > LN_SATURATION;
        Weight { value: if saturated { f64::MAX } else { ln_value.exp() }, ln_value, saturated }
    }
}

/// `L(z)^r` for `r` in `(0, 2κ]`.
pub fn weight_l(z: &PhaseState, p: &PotentialSpec, lp: &LyapunovParams, r: f64) -> Result<Weight> {
    if !(r > 0.0 && r <= 2.0 * lp.kappa) {
        return Err(invalid(format!("exponent r must lie in (0, {}], got {r}", 2.0 * lp.kappa)));
    }
    Ok(Weight::from_ln(r * ln_weight_slice(&z.to_vec(), p, lp)))
}

const BETA_RADIUS: f64 = 50.0;
const BETA_RADIAL_POINTS: usize = 20_001;
const BETA_DIRECTIONS: usize = 64;

/// Largest `β` with `|v|^2 + x·∇U + c3 >= β P_k` on a grid, where
/// `P_k = 2(|x|^2 + |v|^2 + kU)` and `k = c1`.
///
/// The ratio is a Möbius function of `s = |v|^2` and hence monotone, so its
/// infimum over `v` is attained at `s = 0` or in the limit `s → ∞`
/// (value 1/2); only `x` needs a grid.
pub fn compute_beta(p: &PotentialSpec) -> f64 {
    let k = p.c1;
    let d = p.dim;
    let mut best: f64 = 0.5;
    let mut g = vec![0.0; d];
    let mut eval = |x: &[f64], best: &mut f64| {
        let den = 2.0 * (linalg::dot(x, x) + k * p.value(x));
        if den <= 1e-300 {
            return;
        }
        p.grad(x, &mut g);
        let num = linalg::dot(x, &g) + p.c3;
        *best = best.min(num / den);
    };
    let directions: Vec<Vec<f64>> = if d == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        let mut dirs = Vec::new();
        for i in 0..d {
            for s in [1.0, -1.0] {
                let mut e = vec![0.0; d];
                e[i] = s;
                dirs.push(e);
            }
        }
        // deterministic quasi-random directions
        let mut state = 0x2545_f491_4f6c_dd1du64;
        while dirs.len() < BETA_DIRECTIONS + 2 * d {
            let mut e: Vec<f64> = (0..d)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let n = linalg::norm(&e);
            if n > 1e-3 {
                e.iter_mut().for_each(|c| *c /= n);
                dirs.push(e);
            }
        }
        dirs
    };
    let mut x = vec![0.0; d];
    for dir in &directions {
        for i in 1..BETA_RADIAL_POINTS {
            let s = BETA_RADIUS * i as f64 / (BETA_RADIAL_POINTS - 1) as f64;
            x.iter_mut().zip(dir).for_each(|(xi, di)| *xi = s * di);
            eval(&x, &mut best);
        }
    }
    best
}

fn sym2_eigen(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Derive `(β, a_upper, a_star, k, κ)` and the envelope constants.
pub fn derive_params(p: &PotentialSpec) -> Result<LyapunovParams> {
    let beta = compute_beta(p);
    if !(beta > 0.0) {
        return Err(Error::DerivationFailure(format!("drift rate β = {beta} is not positive")));
    }
    let m = p.hess_bound;
    let c1 = p.c1;
    let a_upper = beta * c1 / 32.0;
    let a_star = 3.0 * a_upper / (8.0 * (3.0 + m));
    let k = c1;
    let kappa = 4.0 * (3.0 + m) / 3.0;

    let zero = vec![0.0; p.dim];
    let g0 = p.grad_vec(&zero);
    let g0sq = linalg::dot(&g0, &g0);
    // U(x) <= U(0) + ∇U(0)·x + M|x|^2/2 <= U(0) + |∇U(0)|^2/2 + (M+1)|x|^2/2
    let (m_eff, b_hi) = if g0sq > 0.0 { (m + 1.0, p.value(&zero) + 0.5 * g0sq) } else { (m, p.value(&zero)) };
    let (lambda_lo, _) = sym2_eigen(2.0 * k, 0.5 * k, 1.0);
    let (_, lambda_hi) = sym2_eigen(m_eff + 2.0 * k, 0.5 * k, 1.0);

    let c = a_star * (kappa * lambda_lo - lambda_hi);
    if !(c > 0.0) {
        return Err(Error::DerivationFailure(format!(
            "κ λ_lo = {} does not exceed λ_hi = {lambda_hi}",
            kappa * lambda_lo
        )));
    }
    // sup_s s exp(-c s^2) = 1 / sqrt(2 e c)
    let c_kappa = (2.0 * a_star * b_hi).exp() / (2.0 * std::f64::consts::E * c).sqrt();

    let lp = LyapunovParams {
        a_upper,
        a_star,
        a: a_star,
        k,
        beta,
        kappa,
        hess_bound: m,
        c1,
        c3: p.c3,
        lambda_lo,
        lambda_hi,
        b_hi,
        c_kappa,
    };
    let worst = kappa_check(&lp, lp.c_kappa, 20.0, 1e-2);
    if worst > 1e-12 {
        return Err(Error::DerivationFailure(format!("κ envelope check failed by {worst:e} (log scale)")));
    }
    Ok(lp)
}

/// Largest value of `ln(s L^*(s)) - ln(C L_*(s)^κ)` over `s in [0, s_max]`
/// at spacing `h`; nonpositive means the envelope inequality holds.
pub fn kappa_check(lp: &LyapunovParams, c: f64, s_max: f64, h: f64) -> f64 {
    let n = (s_max / h).round() as usize;
    (1..=n)
        .map(|i| {
            let s = i as f64 * h;
            s.ln() + lp.ln_upper(s) - c.ln() - lp.kappa * lp.ln_lower(s)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Which slack constant the drift was verified against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackForm {
    /// Slack 1.
    Header,
    /// `C(a)`.
    ConstantCa,
    /// `e^{1+M} C(a) exp(4a(σ²d + c3)/β)`, the constant the full argument
    /// carries once the Jacobian factor and the additive drift term are
    /// included.
    Proof,
}

impl SlackForm {
    pub const ALL: [SlackForm; 3] = [SlackForm::Header, SlackForm::ConstantCa, SlackForm::Proof];

    pub fn value(self, lp: &LyapunovParams, sigma: f64, dim: usize) -> f64 {
        match self {
            SlackForm::Header => 1.0,
            SlackForm::ConstantCa => lp.c_of_a(lp.a),
            SlackForm::Proof => {
                (1.0 + lp.hess_bound).exp()
                    * lp.c_of_a(lp.a)
                    * (4.0 * lp.a * (sigma * sigma * dim as f64 + lp.c3) / lp.beta).exp()
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlackForm::Header => "header",
            SlackForm::ConstantCa => "c_of_a",
            SlackForm::Proof => "proof",
        }
    }
}

/// Per-path samples `(Q(Z_t), ‖J_{0,t}‖)` for each grid point and time, so
/// that the drift can be evaluated at several exponents on identical paths.
#[derive(Debug, Clone)]
pub struct DriftSamples {
    pub times: Vec<f64>,
    pub points: Vec<PhaseState>,
    /// `q0[point] = Q(z)`
    pub q0: Vec<f64>,
    /// `q[point][time][path]`
    pub q: Vec<Vec<Vec<f64>>>,
    pub jnorm: Vec<Vec<Vec<f64>>>,
}

pub fn drift_samples(
    p: &PotentialSpec,
    times: &[f64],
    z_grid: &[PhaseState],
    cfg: &SimConfig,
) -> Result<DriftSamples> {
    let mut out = DriftSamples {
        times: times.to_vec(),
        points: z_grid.to_vec(),
        q0: Vec::new(),
        q: Vec::new(),
        jnorm: Vec::new(),
    };
    let n = 2 * p.dim;
    for z in z_grid {
        let ens = simulate_ensemble(z, p, cfg, times)?;
        out.q0.push(q_form(z, p));
        let mut qs = Vec::new();
        let mut js = Vec::new();
        for ti in 0..times.len() {
            qs.push((0..ens.n_paths).map(|i| q_form_slice(ens.state(i, ti), p)).collect());
            js.push(
                (0..ens.n_paths)
                    .map(|i| linalg::operator_norm(ens.tangent(i, ti).unwrap(), n))
                    .collect(),
            );
        }
        out.q.push(qs);
        out.jnorm.push(js);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub t: f64,
    pub z: Vec<f64>,
    pub lhs: MeanEstimate,
    pub lhs_ucb: f64,
    /// `exp(a e^{-βt/4} Q(z))`
    pub rhs: f64,
    pub saturated: bool,
}

impl DriftRow {
    pub fn ratio(&self) -> f64 {
        self.lhs_ucb / self.rhs
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub a: f64,
    pub rows: Vec<DriftRow>,
    /// Slack value of each form, in [`SlackForm::ALL`] order.
    pub slacks: Vec<(SlackForm, f64)>,
    /// Tightest form under which every conclusive row passes.
    pub form_passed: Option<SlackForm>,
    /// Every row passes against `C(a)`.
    pub pass: bool,
    pub inconclusive: bool,
}

impl DriftReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio()).fold(0.0, f64::max)
    }

    /// CSV columns `t, x_1.., v_1.., lhs_estimate, lhs_ucb, rhs, slack, pass`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.rows.first().map_or(1, |r| r.z.len() / 2);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x_{i}")));
        header.extend((1..=d).map(|i| format!("v_{i}")));
        header.extend(["lhs_estimate", "lhs_ucb", "rhs", "slack", "pass"].map(String::from));
        wr.write_record(&header)?;
        let slack = self.slack(SlackForm::ConstantCa);
        for r in &self.rows {
            let mut rec = vec![crate::dynamics::fmt_f64(r.t)];
            rec.extend(r.z.iter().map(|c| crate::dynamics::fmt_f64(*c)));
            rec.push(crate::dynamics::fmt_f64(r.lhs.mean));
            rec.push(crate::dynamics::fmt_f64(r.lhs_ucb));
            rec.push(crate::dynamics::fmt_f64(r.rhs));
            rec.push(crate::dynamics::fmt_f64(slack));
            rec.push((!r.saturated && r.lhs_ucb <= slack * r.rhs).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn slack(&self, form: SlackForm) -> f64 {
        self.slacks.iter().find(|(f, _)| *f == form).map_or(f64::NAN, |(_, v)| *v)
    }
}

impl DriftSamples {
    /// Evaluate the drift inequality at exponent `a`.
    pub fn evaluate(&self, lp: &LyapunovParams, a: f64, sigma: f64, dim: usize) -> Result<DriftReport> {
        let lp = lp.with_a(a)?;
        let mut rows = Vec::new();
        for (pi, z) in self.points.iter().enumerate() {
            for (ti, &t) in self.times.iter().enumerate() {
                let q = &self.q[pi][ti];
                let j = &self.jnorm[pi][ti];
                let saturated = q.iter().any(|qi| a * qi > LN_SATURATION);
                let lhs = mean_se(q.iter().zip(j).map(|(qi, ji)| (a * qi).min(LN_SATURATION).exp() * ji));
                let rhs = (a * (-lp.beta * t / 4.0).exp() * self.q0[pi]).exp();
                rows.push(DriftRow { t, z: z.to_vec(), lhs, lhs_ucb: lhs.ucb99(), rhs, saturated });
            }
        }
        let slacks: Vec<(SlackForm, f64)> = SlackForm::ALL.iter().map(|f| (*f, f.value(&lp, sigma, dim))).collect();
        let inconclusive = rows.iter().any(|r| r.saturated);
        let passes = |s: f64| rows.iter().filter(|r| !r.saturated).all(|r| r.lhs_ucb <= s * r.rhs);
        let form_passed = slacks.iter().find(|(_, s)| passes(*s)).map(|(f, _)| *f);
        let pass = !inconclusive && passes(lp.c_of_a(a));
        Ok(DriftReport { a, rows, slacks, form_passed, pass, inconclusive })
    }
}

/// Verify the drift inequality at one time `t in (0, 1]`.
pub fn verify_drift(
    p: &PotentialSpec,
    lp: &LyapunovParams,
    t: f64,
    z_grid: &[PhaseState],
    cfg: &SimConfig,
) -> Result<DriftReport> {
    verify_drift_times(p, lp, &[t], z_grid, cfg)
}

/// Verify at several times in `(0, 1]` on shared paths.
pub fn verify_drift_times(
    p: &PotentialSpec,
    lp: &LyapunovParams,
    times: &[f64],
    z_grid: &[PhaseState],
    cfg: &SimConfig,
) -> Result<DriftReport> {
    if times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(invalid("drift times must lie in (0, 1]"));
    }
    if z_grid.is_empty() {
        return Err(invalid("z_grid must be nonempty"));
    }
    let mut cfg = cfg.clone();
    cfg.t_final = times.iter().cloned().fold(0.0, f64::max);
    cfg.dt = cfg.dt.min(cfg.t_final);
    let samples = drift_samples(p, times, z_grid, &cfg)?;
    samples.evaluate(lp, lp.a, cfg.sigma, p.dim)
}

/// `n x n` grid of `(x, v)` pairs on `[-h, h]^2` (first coordinate pair; the
/// others are zero).
pub fn square_grid(dim: usize, half_width: f64, n: usize) -> Vec<PhaseState> {
    let axis: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64).collect()
    };
    let mut out = Vec::new();
    for &x in &axis {
        for &v in &axis {
            let mut s = PhaseState::zeros(dim);
            s.x[0] = x;
            s.v[0] = v;
            out.push(s);
        }
    }
    out
}
