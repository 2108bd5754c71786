//! Python bindings for `hypocert`.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hypocert::certify::{self, CertifyOptions, InitialLaw};
use hypocert::dynamics::{self, PhaseState, Scheme, SimConfig};
use hypocert::error::Error;
use hypocert::lyapunov;
use hypocert::malliavin::{self, RhoEvent};
use hypocert::metric::{self, GroundMetric};
use hypocert::potentials::{self, PotentialSpec};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::UnsupportedScheme(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn sim_config(dt: f64, n_paths: usize, seed: u64, scheme: &str, threads: Option<usize>) -> PyResult<SimConfig> {
    let scheme: Scheme = scheme.parse().map_err(to_py)?;
    Ok(SimConfig { dt, n_paths, master_seed: seed, scheme, threads, ..SimConfig::default() })
}

fn phase(z: &[f64]) -> PyResult<PhaseState> {
    PhaseState::from_slice(z).map_err(to_py)
}

/// A confining potential with its hypothesis constants.
#[pyclass(name = "Potential", module = "hypocert", frozen)]
struct PyPotential {
    inner: PotentialSpec,
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    #[pyo3(signature = (dim = 1))]
    fn quadratic(dim: usize) -> PyResult<Self> {
        Ok(PyPotential { inner: potentials::make_quadratic(dim).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (amplitude = 2.0, width = 1.0))]
    fn bump_double_well(amplitude: f64, width: f64) -> PyResult<Self> {
        Ok(PyPotential { inner: potentials::make_bump_double_well(amplitude, width).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (dim = 1))]
    fn quartic(dim: usize) -> PyResult<Self> {
        Ok(PyPotential { inner: potentials::make_quartic(dim).map_err(to_py)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn hess_bound(&self) -> f64 {
        self.inner.hess_bound
    }

    /// `(c1, c2, c3)`
    #[getter]
    fn drift_constants(&self) -> (f64, f64, f64) {
        (self.inner.c1, self.inner.c2, self.inner.c3)
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.check_len(&x)?;
        Ok(self.inner.value(&x))
    }

    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&x)?;
        Ok(self.inner.grad_vec(&x))
    }

    /// Whether the declared constants hold on a grid of `B(0, radius)`.
    #[pyo3(signature = (radius = 10.0, n_grid = 201))]
    fn check_hypotheses(&self, radius: f64, n_grid: usize) -> PyResult<bool> {
        Ok(potentials::check_hypotheses(&self.inner, radius, n_grid).map_err(to_py)?.pass())
    }

    /// Derived Lyapunov constants keyed by name.
    fn lyapunov_params(&self) -> PyResult<HashMap<String, f64>> {
        let lp = lyapunov::derive_params(&self.inner).map_err(to_py)?;
        Ok(HashMap::from([
            ("beta".to_string(), lp.beta),
            ("a_star".to_string(), lp.a_star),
            ("a_upper".to_string(), lp.a_upper),
            ("k".to_string(), lp.k),
            ("kappa".to_string(), lp.kappa),
            ("lambda_lo".to_string(), lp.lambda_lo),
            ("lambda_hi".to_string(), lp.lambda_hi),
            ("c_of_a".to_string(), lp.c_of_a(lp.a)),
        ]))
    }

    fn __repr__(&self) -> String {
        format!("Potential(name={:?}, dim={})", self.inner.name, self.inner.dim)
    }
}

impl PyPotential {
    fn check_len(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim {
            return Err(PyValueError::new_err(format!("expected {} coordinates, got {}", self.inner.dim, x.len())));
        }
        Ok(())
    }
}

/// Simulate `n_paths` paths from `z0`; returns `[path][time] -> [x.., v..]`.
#[pyfunction]
#[pyo3(signature = (potential, z0, record_times, n_paths = 1000, dt = 0.01, seed = 0, scheme = "euler_maruyama", threads = None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    potential: &PyPotential,
    z0: Vec<f64>,
    record_times: Vec<f64>,
    n_paths: usize,
    dt: f64,
    seed: u64,
    scheme: &str,
    threads: Option<usize>,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let mut cfg = sim_config(dt, n_paths, seed, scheme, threads)?;
    cfg.t_final = record_times.iter().copied().fold(0.0, f64::max);
    let z = phase(&z0)?;
    let ens = py
        .detach(|| dynamics::simulate_ensemble(&z, &potential.inner, &cfg, &record_times))
        .map_err(to_py)?;
    Ok((0..ens.n_paths)
        .map(|i| (0..ens.record_times.len()).map(|t| ens.state(i, t).to_vec()).collect())
        .collect())
}

/// Exact empirical W₁ between equal-size samples of flat `point_len` points.
#[pyfunction]
#[pyo3(signature = (a, b, point_len, threads = None))]
fn wasserstein1(py: Python<'_>, a: Vec<f64>, b: Vec<f64>, point_len: usize, threads: Option<usize>) -> PyResult<f64> {
    py.detach(|| metric::wasserstein1(&a, &b, point_len, metric::euclidean, threads)).map_err(to_py)
}

/// Straight-line upper bound on `ρ_r(z1, z2)`.
#[pyfunction]
#[pyo3(signature = (potential, z1, z2, r = 1.0))]
fn rho(potential: &PyPotential, z1: Vec<f64>, z2: Vec<f64>, r: f64) -> PyResult<f64> {
    let lp = lyapunov::derive_params(&potential.inner).map_err(to_py)?;
    Ok(metric::rho_upper(&z1, &z2, &potential.inner, &lp, r).value)
}

/// `(p_hat, ci_lo, ci_hi)` for `P(|Z¹_t - Z²_t| < δ)` with independent noise.
#[pyfunction]
#[pyo3(signature = (potential, z1, z2, t, delta, n_paths = 10000, seed = 0, threads = None))]
#[allow(clippy::too_many_arguments)]
fn coupling_probability(
    py: Python<'_>,
    potential: &PyPotential,
    z1: Vec<f64>,
    z2: Vec<f64>,
    t: f64,
    delta: f64,
    n_paths: usize,
    seed: u64,
    threads: Option<usize>,
) -> PyResult<(f64, f64, f64)> {
    let cfg = sim_config(0.01, n_paths, seed, "euler_maruyama", threads)?;
    let (a, b) = (phase(&z1)?, phase(&z2)?);
    let est = py
        .detach(|| malliavin::coupling_probability(&potential.inner, &a, &b, t, delta, &cfg, None::<&RhoEvent>))
        .map_err(to_py)?;
    Ok((est.euclidean.p_hat, est.euclidean.lo, est.euclidean.hi))
}

/// Fitted decay rate `(rate, ci, window)` of Euclidean W₁ between Dirac laws.
#[pyfunction]
#[pyo3(signature = (potential, z_a, z_b, t_grid, n_paths = 4096, seed = 0, threads = None))]
#[allow(clippy::too_many_arguments)]
fn decay_rate(
    py: Python<'_>,
    potential: &PyPotential,
    z_a: Vec<f64>,
    z_b: Vec<f64>,
    t_grid: Vec<f64>,
    n_paths: usize,
    seed: u64,
    threads: Option<usize>,
) -> PyResult<(f64, f64, usize)> {
    let cfg = sim_config(0.01, n_paths, seed, "euler_maruyama", threads)?;
    let (a, b) = (InitialLaw::Dirac { z: z_a }, InitialLaw::Dirac { z: z_b });
    let curve = py
        .detach(|| certify::measure_decay(&potential.inner, &a, &b, &t_grid, &cfg, &[GroundMetric::Euclidean], None))
        .map_err(to_py)?;
    let fit = &curve.fits[0];
    Ok((fit.rate, fit.ci, fit.window))
}

/// Assemble a certificate; returns its key-value fields.
#[pyfunction(name = "certify")]
#[pyo3(signature = (potential, n_paths = 4000, seed = 0, coupling_pairs = 200_000, threads = None))]
fn certify_potential(
    py: Python<'_>,
    potential: &PyPotential,
    n_paths: usize,
    seed: u64,
    coupling_pairs: usize,
    threads: Option<usize>,
) -> PyResult<HashMap<String, String>> {
    let cfg = sim_config(0.01, n_paths, seed, "euler_maruyama", threads)?;
    let opts = CertifyOptions { coupling_pairs, ..CertifyOptions::default() };
    let cert = py.detach(|| certify::assemble(&potential.inner, &cfg, &opts)).map_err(to_py)?;
    Ok(cert
        .to_key_value()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Run the command-line tool with `args` (without the program name);
/// returns its exit code.
#[pyfunction]
fn main(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("hypocert".to_string()).chain(args).collect();
    py.detach(|| hypocert::harness::cli::main_with_args(argv))
}

#[pymodule]
fn hypocert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_probability, m)?)?;
    m.add_function(wrap_pyfunction!(decay_rate, m)?)?;
    m.add_function(wrap_pyfunction!(certify_potential, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
