//! Weighted path metrics and empirical Wasserstein-1 distances.
//!
//! `ρ_r(z1, z2) = inf_γ ∫ L^r(γ) |γ̇|` is bounded above by its value on the
//! straight segment, evaluated by 32-point Gauss–Legendre quadrature. The
//! combined metric is `d = min(ρ_r / δ, 1) + β_w ρ`.

pub mod assignment;

use std::str::FromStr;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::lyapunov::{ln_weight_slice, LyapunovParams, LN_SATURATION};
use crate::potentials::PotentialSpec;
use crate::quadrature::gauss_legendre;

pub use assignment::{brute_force, solve_dense, solve_lazy, solve_lazy_with_hint, Assignment};

#[derive(Debug, Clone, Serialize)]
pub struct MetricParams {
    pub lp: LyapunovParams,
    pub r: f64,
    pub delta: f64,
    pub beta_w: f64,
}

impl MetricParams {
    pub fn new(lp: LyapunovParams, r: f64, delta: f64, beta_w: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid(format!("r must lie in (0, 1], got {r}")));
        }
        if !(delta > 0.0) {
            return Err(invalid("delta must be positive"));
        }
        if !(beta_w > 0.0 && beta_w < 1.0) {
            return Err(invalid(format!("beta_w must lie in (0, 1), got {beta_w}")));
        }
        Ok(MetricParams { lp, r, delta, beta_w })
    }
}

/// Upper bound on `ρ_r` along the straight segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoBound {
    /// The bound, or `+inf` when saturated.
    pub value: f64,
    pub ln_value: f64,
    pub saturated: bool,
}

fn gl32() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32))
}

/// `∫_0^1 L^r(z1 + s(z2 - z1)) |z2 - z1| ds` by 32-point Gauss–Legendre,
/// accumulated in the log domain.
pub fn rho_upper(z1: &[f64], z2: &[f64], p: &PotentialSpec, lp: &LyapunovParams, r: f64) -> RhoBound {
    let len = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if len == 0.0 {
        return RhoBound { value: 0.0, ln_value: f64::NEG_INFINITY, saturated: false };
    }
    if lp.a_star == 0.0 {
        return RhoBound { value: len, ln_value: len.ln(), saturated: false };
    }
    let (nodes, weights) = gl32();
    let mut buf = vec![0.0; z1.len()];
    let mut logs = [0.0; 32];
    for (k, s) in nodes.iter().enumerate() {
        let s = 0.5 * (s + 1.0);
        buf.iter_mut()
            .zip(z1.iter().zip(z2))
            .for_each(|(b, (a, c))| *b = a + s * (c - a));
        logs[k] = r * ln_weight_slice(&buf, p, lp) + (0.5 * weights[k]).ln();
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_value = len.ln() + m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let saturated = ln_value > LN_SATURATION;
    RhoBound { value: if saturated { f64::INFINITY } else { ln_value.exp() }, ln_value, saturated }
}

/// `min(ρ_r / δ, 1) + β_w ρ` with straight-line bounds for both terms.
pub fn metric_d(z1: &[f64], z2: &[f64], p: &PotentialSpec, mp: &MetricParams) -> f64 {
    let rr = rho_upper(z1, z2, p, &mp.lp, mp.r);
    let rho = rho_upper(z1, z2, p, &mp.lp, 1.0);
    (rr.value / mp.delta).min(1.0) + mp.beta_w * rho.value
}

/// Ground metrics selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    Euclidean,
    Rho,
    RhoR,
    D,
}

impl FromStr for GroundMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(GroundMetric::Euclidean),
            "rho" => Ok(GroundMetric::Rho),
            "rho_r" => Ok(GroundMetric::RhoR),
            "d" => Ok(GroundMetric::D),
            other => Err(invalid(format!("unknown ground metric `{other}`"))),
        }
    }
}

impl GroundMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundMetric::Euclidean => "euclidean",
            GroundMetric::Rho => "rho",
            GroundMetric::RhoR => "rho_r",
            GroundMetric::D => "d",
        }
    }

    pub fn eval(self, z1: &[f64], z2: &[f64], p: &PotentialSpec, mp: &MetricParams) -> f64 {
        match self {
            GroundMetric::Euclidean => euclidean(z1, z2),
            GroundMetric::Rho => rho_upper(z1, z2, p, &mp.lp, 1.0).value,
            GroundMetric::RhoR => rho_upper(z1, z2, p, &mp.lp, mp.r).value,
            GroundMetric::D => metric_d(z1, z2, p, mp),
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Default number of nearest candidates per row/column in the matcher.
pub const DEFAULT_CANDIDATES: usize = 16;

/// Exact W₁ between two equal-size empirical measures stored flat with
/// `point_len` coordinates per point.
pub fn wasserstein1<F>(a: &[f64], b: &[f64], point_len: usize, ground: F, threads: Option<usize>) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    if point_len == 0 || a.len() % point_len != 0 || b.len() % point_len != 0 {
        return Err(invalid("sample arrays must hold whole points"));
    }
    let n = a.len() / point_len;
    if n != b.len() / point_len {
        return Err(invalid(format!(
            "sample sizes differ: {} vs {}",
            n,
            b.len() / point_len
        )));
    }
    if n == 0 {
        return Err(invalid("samples must be nonempty"));
    }
    let pa = |i: usize| &a[i * point_len..(i + 1) * point_len];
    let pb = |j: usize| &b[j * point_len..(j + 1) * point_len];
    // candidates also come from nearest neighbours after aligning the means
    let mean = |s: &[f64]| {
        let mut m = vec![0.0; point_len];
        for p in s.chunks(point_len) {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b / n as f64);
        }
        m
    };
    let shift: Vec<f64> = mean(b).iter().zip(mean(a)).map(|(x, y)| x - y).collect();
    let hint = |i: usize, j: usize| {
        pa(i).iter().zip(pb(j)).zip(&shift).map(|((x, y), s)| (x + s - y).powi(2)).sum::<f64>()
    };
    let cost = |i: usize, j: usize| ground(pa(i), pb(j));
    let sol = solve_lazy_with_hint(n, &cost, Some(&hint), DEFAULT_CANDIDATES, threads)?;
    Ok(sol.total_cost / n as f64)
}

/// W₁ in one dimension via the sorted coupling.
pub fn wasserstein1_1d_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!("sample sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("samples must be nonempty"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.total_cmp(y));
    sb.sort_by(|x, y| x.total_cmp(y));
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `max L^r` over `B(0, radius)` bounded by the upper envelope, so that
/// `ρ_r(z1, z2) <= R'' |z1 - z2|` for `z1, z2` in the ball.
pub fn compact_equivalence_constant(lp: &LyapunovParams, r: f64, radius: f64) -> f64 {
    (r * lp.ln_upper(radius)).exp()
}

/// `|z1 - z2| exp(2 r a b + r a λ_hi (|z1|^2 + |z2|^2))`, an explicit upper
/// bound of the straight-line integral.
pub fn rho_envelope_bound(z1: &[f64], z2: &[f64], lp: &LyapunovParams, r: f64) -> f64 {
    let s = linalg::dot(z1, z1) + linalg::dot(z2, z2);
    euclidean(z1, z2) * (r * lp.a_star * (2.0 * lp.b_hi + lp.lambda_hi * s)).exp()
}
