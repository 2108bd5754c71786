//! Summary statistics, confidence bounds and the two-sample energy test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.959963984540054;
/// Normal quantile for a one-sided 99% bound.
pub const Z99_ONE_SIDED: f64 = 2.326347874040841;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn ucb99(&self) -> f64 {
        self.mean + Z99_ONE_SIDED * self.se
    }
}

/// Mean and standard error, accumulated with Welford's update.
pub fn mean_se(xs: impl IntoIterator<Item = f64>) -> MeanEstimate {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in xs {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    MeanEstimate { mean, se: (var / n.max(1) as f64).sqrt(), n }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProportionCi {
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub successes: u64,
    pub n: u64,
}

/// Wilson score interval at the given normal quantile.
pub fn wilson(successes: u64, n: u64, z: f64) -> ProportionCi {
    if n == 0 {
        return ProportionCi { p_hat: 0.0, lo: 0.0, hi: 1.0, successes, n };
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ProportionCi {
        p_hat: p,
        lo: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        hi: if successes == n { 1.0 } else { (centre + half).min(1.0) },
        successes,
        n,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_ci: f64,
    pub n: usize,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, slope_ci) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::INFINITY);
        (se, t * se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Some(LinearFit { slope, intercept, slope_se, slope_ci, n })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Two-sample energy-distance permutation test on points of dimension `dim`
/// stored flat. The p-value uses the `(1 + #{T_perm >= T}) / (1 + B)` rule.
pub fn energy_test(a: &[f64], b: &[f64], dim: usize, permutations: usize, seed: u64) -> EnergyTest {
    let na = a.len() / dim;
    let nb = b.len() / dim;
    let n = na + nb;
    let pt = |i: usize| -> &[f64] {
        if i < na {
            &a[i * dim..(i + 1) * dim]
        } else {
            &b[(i - na) * dim..(i - na + 1) * dim]
        }
    };
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d: f64 = pt(i)
                .iter()
                .zip(pt(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let total: f64 = dist.iter().sum();
    // The energy statistic depends on the labelling only through the
    // within-group sums, since the cross sum is total - within.
    let stat = |labels: &[bool]| -> f64 {
        let (mut saa, mut sbb) = (0.0, 0.0);
        for i in 0..n {
            let row = &dist[i * n..(i + 1) * n];
            for j in 0..n {
                if labels[i] == labels[j] {
                    if labels[i] {
                        saa += row[j];
                    } else {
                        sbb += row[j];
                    }
                }
            }
        }
        let sab = 0.5 * (total - saa - sbb);
        let (fa, fb) = (na as f64, nb as f64);
        (fa * fb / (fa + fb)) * (2.0 * sab / (fa * fb) - saa / (fa * fa) - sbb / (fb * fb))
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < na).collect();
    let observed = stat(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if stat(&labels) >= observed {
            exceed += 1;
        }
    }
    EnergyTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_known_value() {
        // 10 of 100 at 95%: (0.0552, 0.1744)
        let ci = wilson(10, 100, Z95);
        assert!((ci.lo - 0.05523).abs() < 1e-4);
        assert!((ci.hi - 0.17437).abs() < 1e-4);
        let zero = wilson(0, 50, Z95);
        assert_eq!(zero.lo, 0.0);
        assert!(zero.hi > 0.0);
    }

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|t| 1.0 - 0.5 * t).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!(f.slope_ci < 1e-12);
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 8.0];
        let e = mean_se(xs);
        let m = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!((e.mean - m).abs() < 1e-14);
        assert!((e.se - (var / 5.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn energy_test_separates_shifted_samples() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal) + 1.0).collect();
        let c: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(energy_test(&a, &b, 1, 199, 1).p_value < 0.01);
        assert!(energy_test(&a, &c, 1, 199, 1).p_value > 0.01);
    }
}
