//! Small dense helpers for the 2d×2d matrices that show up along trajectories.
//!
//! Matrices are row-major `Vec<f64>` / `&[f64]` of side `n`. The hot loops in
//! [`crate::dynamics`] use these directly; analytic work that needs eigen or
//! singular values goes through `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// `out = a · b`, all n×n.
pub fn matmul(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

pub fn matmul_new(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    matmul(a, b, n, &mut out);
    out
}

pub fn matvec(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|k| a[i * n + k] * x[k]).sum())
        .collect()
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Drift Jacobian of the kinetic Langevin field, `[[0, I], [-hess, -I]]`.
pub fn drift_jacobian(hess: &[f64], d: usize) -> Vec<f64> {
    let n = 2 * d;
    let mut m = vec![0.0; n * n];
    for i in 0..d {
        m[i * n + d + i] = 1.0;
        m[(d + i) * n + d + i] = -1.0;
        for j in 0..d {
            m[(d + i) * n + j] = -hess[i * d + j];
        }
    }
    m
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &[f64], n: usize) -> Vec<f64> {
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=20 {
        term = matmul_new(&term, &scaled, n);
        let inv_k = 1.0 / k as f64;
        term.iter_mut().for_each(|x| *x *= inv_k);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
    }
    for _ in 0..squarings {
        result = matmul_new(&result, &result, n);
    }
    result
}

/// Spectral norm of a square matrix.
pub fn operator_norm(a: &[f64], n: usize) -> f64 {
    if n == 2 {
        // closed form for the singular values of a 2x2 matrix
        let (p, q, r, s) = (a[0], a[1], a[2], a[3]);
        let fro = p * p + q * q + r * r + s * s;
        let det = p * s - q * r;
        let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
        return ((fro + disc) / 2.0).sqrt();
    }
    let m = DMatrix::from_row_slice(n, n, a);
    let gram = m.transpose() * &m;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let inv = m.try_inverse()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    Some(out)
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix. Tiny
/// negative pivots from round-off are clamped to zero.
pub fn cholesky_psd(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = s.max(0.0).sqrt();
            } else {
                let piv = l[j * n + j];
                l[i * n + j] = if piv > 0.0 { s / piv } else { 0.0 };
            }
        }
    }
    l
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
