//! Confining potentials and numerical checks of their hypotheses.
//!
//! Every potential is shifted so that `U >= 0` with `min U = 0`, and carries
//! the constants `M` (Hessian bound) and `(c1, c2, c3)` of the drift
//! inequality `x·∇U(x) >= c1 U(x) + c2 |x|^2 - c3`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// A user-supplied potential. The Hessian defaults to central differences
/// of the gradient.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);

    fn hess(&self, x: &[f64], out: &mut [f64]) {
        fd_hessian(self, x, out);
    }
}

/// Central-difference Hessian of `grad`, step `1e-5 * max(1, |x|)`.
pub fn fd_hessian<P: Potential + ?Sized>(p: &P, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let h = 1e-5 * linalg::norm(x).max(1.0);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + h;
        p.grad(&xp, &mut gp);
        xp[j] = x[j] - h;
        p.grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..d {
            out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    // symmetrize away the O(h^2) asymmetry
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (out[i * d + j] + out[j * d + i]);
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
}

#[derive(Clone)]
pub enum PotentialKind {
    /// `|x|^2 / 2`
    Quadratic,
    /// `x^2/2 + A exp(-x^2 / (2 w^2)) - shift` in one dimension.
    BumpDoubleWell { amplitude: f64, width: f64, shift: f64 },
    /// `|x|^4 / 4`; violates the Hessian bound, kept as a negative control.
    Quartic,
    Custom(Arc<dyn Potential>),
}

impl fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialKind::Quadratic => write!(f, "Quadratic"),
            PotentialKind::BumpDoubleWell { amplitude, width, shift } => f
                .debug_struct("BumpDoubleWell")
                .field("amplitude", amplitude)
                .field("width", width)
                .field("shift", shift)
                .finish(),
            PotentialKind::Quartic => write!(f, "Quartic"),
            PotentialKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub name: String,
    pub dim: usize,
    pub kind: PotentialKind,
    /// Upper bound on `Hess U` as a quadratic form.
    pub hess_bound: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// A point where `U` attains its minimum (0 after the shift).
    pub minimizer: Vec<f64>,
    /// Adjustments made while constructing the spec (clamps and the like).
    pub notes: Vec<String>,
}

impl PotentialSpec {
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic => 0.5 * linalg::dot(x, x),
            PotentialKind::BumpDoubleWell { amplitude, width, shift } => {
                let y = x[0];
                0.5 * y * y + amplitude * (-y * y / (2.0 * width * width)).exp() - shift
            }
            PotentialKind::Quartic => 0.25 * linalg::dot(x, x).powi(2),
            PotentialKind::Custom(p) => p.value(x),
        }
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            PotentialKind::Quadratic => out.copy_from_slice(x),
            PotentialKind::BumpDoubleWell { amplitude, width, .. } => {
                let y = x[0];
                let w2 = width * width;
                out[0] = y * (1.0 - amplitude / w2 * (-y * y / (2.0 * w2)).exp());
            }
            PotentialKind::Quartic => {
                let r2 = linalg::dot(x, x);
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = r2 * xi);
            }
            PotentialKind::Custom(p) => p.grad(x, out),
        }
    }

    pub fn grad_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.grad(x, &mut g);
        g
    }

    /// Hessian, row-major `d x d`.
    pub fn hess(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            PotentialKind::Quadratic => out.copy_from_slice(&linalg::identity(d)),
            PotentialKind::BumpDoubleWell { amplitude, width, .. } => {
                out[0] = bump_second_derivative(x[0], *amplitude, *width);
            }
            PotentialKind::Quartic => {
                let r2 = linalg::dot(x, x);
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = 2.0 * x[i] * x[j] + if i == j { r2 } else { 0.0 };
                    }
                }
            }
            PotentialKind::Custom(p) => p.hess(x, out),
        }
    }

    pub fn hess_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim * self.dim];
        self.hess(x, &mut h);
        h
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, PotentialKind::Quadratic)
    }

    /// Replace the hypothesis constants. `c1 > 1` is clamped to 1 and noted.
    pub fn with_constants(mut self, hess_bound: f64, c1: f64, c2: f64, c3: f64) -> Result<Self> {
        for (name, v) in [("hess_bound", hess_bound), ("c1", c1), ("c2", c2), ("c3", c3)] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        if hess_bound < 0.0 {
            return Err(invalid("hess_bound must be nonnegative"));
        }
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(invalid("c1 and c2 must be positive"));
        }
        if c3 < 0.0 {
            return Err(invalid(format!("c3 must be nonnegative, got {c3}")));
        }
        self.hess_bound = hess_bound;
        self.c1 = c1.min(1.0);
        if c1 > 1.0 {
            self.notes.push(format!("c1 = {c1} clamped to 1"));
        }
        self.c2 = c2;
        self.c3 = c3;
        Ok(self)
    }
}

fn bump_second_derivative(y: f64, amplitude: f64, width: f64) -> f64 {
    let w2 = width * width;
    1.0 + amplitude / w2 * (y * y / w2 - 1.0) * (-y * y / (2.0 * w2)).exp()
}

/// `U(x) = |x|^2 / 2` with `M = 1`, `(c1, c2, c3) = (1, 1/2, 0)`.
pub fn make_quadratic(dim: usize) -> Result<PotentialSpec> {
    if dim == 0 {
        return Err(invalid("dim must be at least 1"));
    }
    Ok(PotentialSpec {
        name: "quadratic".into(),
        dim,
        kind: PotentialKind::Quadratic,
        hess_bound: 1.0,
        c1: 1.0,
        c2: 0.5,
        c3: 0.0,
        minimizer: vec![0.0; dim],
        notes: Vec::new(),
    })
}

/// `U(x) = |x|^4 / 4` in `dim` dimensions, claiming `M = 1`. The claim is
/// false for `|x| > 1/sqrt(3)`, which is the point: this spec must be
/// rejected by [`check_hypotheses`].
pub fn make_quartic(dim: usize) -> Result<PotentialSpec> {
    if dim == 0 {
        return Err(invalid("dim must be at least 1"));
    }
    Ok(PotentialSpec {
        name: "quartic".into(),
        dim,
        kind: PotentialKind::Quartic,
        hess_bound: 1.0,
        c1: 1.0,
        c2: 0.5,
        // max over r of r^2/2 - 3 r^4/4 is 1/12
        c3: 1.0 / 12.0,
        minimizer: vec![0.0; dim],
        notes: Vec::new(),
    })
}

/// Wrap a user potential. Constants are taken as given and should be
/// checked with [`check_hypotheses`].
pub fn make_custom(
    name: &str,
    potential: Arc<dyn Potential>,
    hess_bound: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    minimizer: Vec<f64>,
) -> Result<PotentialSpec> {
    let dim = potential.dim();
    if dim == 0 || minimizer.len() != dim {
        return Err(invalid("custom potential needs dim >= 1 and a minimizer of length dim"));
    }
    PotentialSpec {
        name: name.into(),
        dim,
        kind: PotentialKind::Custom(potential),
        hess_bound: 0.0,
        c1: 1.0,
        c2: 1.0,
        c3: 0.0,
        minimizer,
        notes: Vec::new(),
    }
    .with_constants(hess_bound, c1, c2, c3)
}

const SCAN_RADIUS: f64 = 50.0;
const SCAN_POINTS: usize = 200_001;
/// Largest `c3` the constant search is allowed to return.
pub const C3_SEARCH_MAX: f64 = 100.0;

/// One-dimensional double well `x^2/2 + A exp(-x^2/(2w^2))`, shifted to
/// `min U = 0`.
///
/// The wells sit at `±x*` with `x*^2 = 2 w^2 ln(A/w^2)` when `A > w^2`
/// (otherwise the origin is the unique minimum). `M` is the maximum of `U''`,
/// located by a scan over `[-50, 50]` and refined by golden-section search;
/// beyond the scan `U''` tends to 1 from below. `c1` is fixed at 1 and `c2`
/// is the largest value on a grid in `(0, 1 - c1/2]` whose required `c3`
/// (maximum of `c1 U + c2 x^2 - x U'` over the scan) stays within
/// [`C3_SEARCH_MAX`]. For `c2 <= 1 - c1/2` the residual is eventually
/// decreasing in `|x|`, so the scan maximum is the global one.
pub fn make_bump_double_well(amplitude: f64, width: f64) -> Result<PotentialSpec> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(invalid("amplitude must be finite and nonnegative"));
    }
    if !(width > 0.0 && width.is_finite()) {
        return Err(invalid("width must be finite and positive"));
    }
    let w2 = width * width;
    let ratio = amplitude / w2;
    let x_star = if ratio > 1.0 { (2.0 * w2 * ratio.ln()).sqrt() } else { 0.0 };
    let raw = |y: f64| 0.5 * y * y + amplitude * (-y * y / (2.0 * w2)).exp();
    let shift = raw(x_star);

    let mut spec = PotentialSpec {
        name: "bump_double_well".into(),
        dim: 1,
        kind: PotentialKind::BumpDoubleWell { amplitude, width, shift },
        hess_bound: 1.0,
        c1: 1.0,
        c2: 0.5,
        c3: 0.0,
        minimizer: vec![x_star],
        notes: Vec::new(),
    };

    let upp = |y: f64| bump_second_derivative(y, amplitude, width);
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| -SCAN_RADIUS + 2.0 * SCAN_RADIUS * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let h = grid[1] - grid[0];
    let (imax, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &y)| (i, upp(y)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let peak = golden_max(upp, grid[imax] - h, grid[imax] + h);
    spec.hess_bound = upp(peak).max(1.0);

    let c1 = 1.0;
    let c2_max = 1.0 - c1 / 2.0;
    let mut chosen = None;
    let mut worst = (f64::NAN, f64::NEG_INFINITY);
    for step in 0..=50 {
        let c2 = c2_max * (1.0 - step as f64 / 50.0);
        if c2 <= 0.0 {
            break;
        }
        let mut need = (0.0, f64::NEG_INFINITY);
        for &y in &grid {
            let mut g = [0.0];
            spec.grad(&[y], &mut g);
            let resid = c1 * spec.value(&[y]) + c2 * y * y - y * g[0];
            if resid > need.1 {
                need = (y, resid);
            }
        }
        if need.1 <= C3_SEARCH_MAX {
            chosen = Some((c2, need.1.max(0.0)));
            break;
        }
        worst = need;
    }
    match chosen {
        Some((c2, c3)) => {
            spec.c1 = c1;
            spec.c2 = c2;
            // pad by a relative hair so grid points off the scan lattice still pass
            spec.c3 = if c3 > 0.0 { c3 * (1.0 + 1e-9) + 1e-12 } else { 0.0 };
            Ok(spec)
        }
        None => Err(Error::ConstructionFailure {
            x: worst.0,
            message: format!(
                "drift inequality needs c3 = {:.4} > {C3_SEARCH_MAX} for every c2 in the search range",
                worst.1
            ),
        }),
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub radius: f64,
    pub n_points: usize,
    /// Minimum of `x·∇U - c1 U - c2|x|^2 + c3` over the grid.
    pub drift_margin: f64,
    pub drift_argmin: Vec<f64>,
    /// Minimum of `M - λmax(Hess U)` over the grid.
    pub hess_margin: f64,
    pub hess_argmin: Vec<f64>,
    /// Minimum of `U` over the grid (should be >= 0).
    pub min_value: f64,
    pub drift_pass: bool,
    pub hess_pass: bool,
}

impl HypothesisReport {
    pub fn pass(&self) -> bool {
        self.drift_pass && self.hess_pass
    }
}

/// Tolerance on both margins.
pub const HYPOTHESIS_TOL: f64 = 1e-9;

/// Grid points in `B(0, radius)`: `n_grid` per axis on `[-radius, radius]^d`,
/// keeping those inside the ball.
pub fn ball_grid(dim: usize, radius: f64, n_grid: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..n_grid)
        .map(|i| -radius + 2.0 * radius * i as f64 / (n_grid - 1) as f64)
        .collect();
    let total = n_grid.pow(dim as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut p = vec![0.0; dim];
        for c in p.iter_mut() {
            *c = axis[idx % n_grid];
            idx /= n_grid;
        }
        if linalg::norm(&p) <= radius * (1.0 + 1e-12) {
            out.push(p);
        }
    }
    out
}

pub fn check_hypotheses(p: &PotentialSpec, radius: f64, n_grid: usize) -> Result<HypothesisReport> {
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    if n_grid < 2 {
        return Err(invalid("n_grid must be at least 2"));
    }
    let d = p.dim;
    let points = ball_grid(d, radius, n_grid);
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    let mut rep = HypothesisReport {
        radius,
        n_points: points.len(),
        drift_margin: f64::INFINITY,
        drift_argmin: vec![],
        hess_margin: f64::INFINITY,
        hess_argmin: vec![],
        min_value: f64::INFINITY,
        drift_pass: false,
        hess_pass: false,
    };
    for x in &points {
        let u = p.value(x);
        p.grad(x, &mut g);
        let margin = linalg::dot(x, &g) - p.c1 * u - p.c2 * linalg::dot(x, x) + p.c3;
        if margin < rep.drift_margin {
            rep.drift_margin = margin;
            rep.drift_argmin = x.clone();
        }
        p.hess(x, &mut h);
        let lmax = if d == 1 { h[0] } else { *linalg::sym_eigenvalues(&h, d).last().unwrap() };
        let hm = p.hess_bound - lmax;
        if hm < rep.hess_margin {
            rep.hess_margin = hm;
            rep.hess_argmin = x.clone();
        }
        rep.min_value = rep.min_value.min(u);
    }
    rep.drift_pass = rep.drift_margin >= -HYPOTHESIS_TOL;
    rep.hess_pass = rep.hess_margin >= -HYPOTHESIS_TOL;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_values() {
        let p = make_quadratic(1).unwrap();
        assert_eq!(p.value(&[0.0]), 0.0);
        assert_eq!(p.value(&[2.0]), 2.0);
        let g = p.grad_vec(&[2.0]);
        // equality case of the drift inequality
        assert_eq!(2.0 * g[0], p.c1 * 2.0 + p.c2 * 4.0 - p.c3);
        let p3 = make_quadratic(3).unwrap();
        assert_eq!(p3.value(&[1.0, 1.0, 1.0]), 1.5);
        assert_eq!(p3.hess_vec(&[1.0, 1.0, 1.0]), linalg::identity(3));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(make_quadratic(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn negative_c3_rejected() {
        let p = make_quadratic(1).unwrap();
        assert!(matches!(p.with_constants(1.0, 1.0, 0.5, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn c1_is_clamped() {
        let p = make_quadratic(1).unwrap().with_constants(1.0, 1.5, 0.5, 0.0).unwrap();
        assert_eq!(p.c1, 1.0);
        assert_eq!(p.notes.len(), 1);
    }

    #[test]
    fn fd_hessian_matches_analytic() {
        let p = make_bump_double_well(2.0, 1.0).unwrap();
        struct Wrap(PotentialSpec);
        impl Potential for Wrap {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &[f64]) -> f64 {
                self.0.value(x)
            }
            fn grad(&self, x: &[f64], out: &mut [f64]) {
                self.0.grad(x, out)
            }
        }
        let w = Wrap(p.clone());
        for &x in &[-3.0, -0.4, 0.0, 1.2, 7.0] {
            let mut h = [0.0];
            w.hess(&[x], &mut h);
            assert!((h[0] - p.hess_vec(&[x])[0]).abs() < 1e-6, "x = {x}");
        }
    }
}
