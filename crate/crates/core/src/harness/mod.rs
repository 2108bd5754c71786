//! Command-line experiment harness.
//!
//! Each subcommand loads an [`ExperimentConfig`], runs one stage, writes its
//! CSV artifact into the output directory, appends rows to `summary.csv` and
//! writes `manifest.toml`. Exit codes: 0 pass, 1 usage or config error,
//! 2 verification failure, 3 inconclusive.

pub mod cli;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::certify::{self, CertifyOptions, InitialLaw};
use crate::dynamics::{self, fmt_f64, PhaseState, SimConfig};
use crate::error::{Error, Result};
use crate::gamma2::{self, QuadraticObservable};
use crate::lyapunov::{self, LyapunovParams};
use crate::malliavin::{self, RhoEvent};
use crate::metric::{self, GroundMetric, MetricParams};
use crate::potentials::PotentialSpec;

pub use config::ExperimentConfig;
pub use report::{emit_report, Provenance, RowStatus, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Pass = 0,
    Usage = 1,
    Fail = 2,
    Inconclusive = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn worst(self, other: ExitStatus) -> ExitStatus {
        let rank = |s: ExitStatus| match s {
            ExitStatus::Pass => 0,
            ExitStatus::Inconclusive => 1,
            ExitStatus::Fail => 2,
            ExitStatus::Usage => 3,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }

    fn of_row(s: RowStatus) -> ExitStatus {
        match s {
            RowStatus::Fail => ExitStatus::Fail,
            RowStatus::Inconclusive => ExitStatus::Inconclusive,
            _ => ExitStatus::Pass,
        }
    }
}

/// Exit status for an error escaping a subcommand.
pub fn exit_status_of(e: &Error) -> ExitStatus {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnsupportedScheme(_) => ExitStatus::Usage,
        Error::CertificateFailure { message, .. } if message.contains("inconclusive") => ExitStatus::Inconclusive,
        _ => ExitStatus::Fail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Lyapunov,
    Gradient,
    Coupling,
    Rate,
    Certify,
    Selftest,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Lyapunov => "lyapunov",
            Subcommand::Gradient => "gradient",
            Subcommand::Coupling => "coupling",
            Subcommand::Rate => "rate",
            Subcommand::Certify => "certify",
            Subcommand::Selftest => "selftest",
        }
    }
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: ExitStatus,
    pub artifacts: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

struct Run<'a> {
    cmd: Subcommand,
    cfg: &'a ExperimentConfig,
    p: PotentialSpec,
    sim: SimConfig,
    dir: PathBuf,
    artifacts: Vec<String>,
    rows: Vec<SummaryRow>,
}

impl Run<'_> {
    fn row(&mut self, quantity: &str, value: impl ToString, provenance: Provenance, status: RowStatus) {
        self.rows.push(SummaryRow {
            subcommand: self.cmd.as_str().to_string(),
            quantity: quantity.to_string(),
            value: value.to_string(),
            provenance,
            status,
        });
    }

    /// Render a CSV, check its header against `expected`, then write it.
    fn artifact<F>(&mut self, name: &str, expected: Vec<String>, render: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        report::check_header(name, &expected, &report::csv_header(&buf)?)?;
        std::fs::write(self.dir.join(name), buf)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn lyapunov_params(&self) -> Result<LyapunovParams> {
        lyapunov::derive_params(&self.p)
    }

    fn r(&self, lp: &LyapunovParams) -> f64 {
        self.cfg.metric.r.unwrap_or(lp.lambda_lo / (2.0 * lp.lambda_hi))
    }

    fn phase(&self, z: &[f64], what: &str) -> Result<PhaseState> {
        if z.len() != 2 * self.p.dim {
            return Err(Error::Config(format!("{what}: expected {} coordinates, got {}", 2 * self.p.dim, z.len())));
        }
        PhaseState::from_slice(z)
    }
}

fn state_header(prefix: &[&str], dim: usize, suffix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend((1..=dim).map(|i| format!("x_{i}")));
    h.extend((1..=dim).map(|i| format!("v_{i}")));
    h.extend(suffix.iter().map(|s| s.to_string()));
    h
}

fn status_of(pass: bool, inconclusive: bool) -> RowStatus {
    if inconclusive {
        RowStatus::Inconclusive
    } else if pass {
        RowStatus::Pass
    } else {
        RowStatus::Fail
    }
}

/// Run `cmd` and write artifacts, `summary.csv` and `manifest.toml` to
/// `cfg.output.dir`.
pub fn run(cmd: Subcommand, cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir)?;
    let mut run = Run {
        cmd,
        cfg,
        p: cfg.potential_spec()?,
        sim: cfg.sim_config(),
        dir: dir.clone(),
        artifacts: Vec::new(),
        rows: Vec::new(),
    };
    run.sim.validate(&run.p)?;
    let result = match cmd {
        Subcommand::Simulate => simulate(&mut run),
        Subcommand::Lyapunov => lyapunov_cmd(&mut run),
        Subcommand::Gradient => gradient(&mut run),
        Subcommand::Coupling => coupling(&mut run),
        Subcommand::Rate => rate(&mut run),
        Subcommand::Certify => certify_cmd(&mut run),
        Subcommand::Selftest => selftest(&mut run),
    };
    let status = match &result {
        Ok(()) => run.rows.iter().fold(ExitStatus::Pass, |s, r| s.worst(ExitStatus::of_row(r.status))),
        Err(e) => {
            let st = exit_status_of(e);
            let rs = if st == ExitStatus::Inconclusive { RowStatus::Inconclusive } else { RowStatus::Fail };
            run.row("error", e.to_string().replace('\n', " "), Provenance::Measured, rs);
            st
        }
    };
    report::append_summary(&dir, &run.rows)?;
    write_manifest(&dir, cmd, cfg, &run.sim, &run.artifacts, status, start.elapsed().as_secs_f64())?;
    if let Err(e) = result {
        if status == ExitStatus::Usage {
            return Err(e);
        }
    }
    Ok(Outcome { status, artifacts: run.artifacts, rows: run.rows })
}

fn write_manifest(
    dir: &Path,
    cmd: Subcommand,
    cfg: &ExperimentConfig,
    sim: &SimConfig,
    artifacts: &[String],
    status: ExitStatus,
    wall: f64,
) -> Result<()> {
    let mut run = toml::Table::new();
    run.insert("subcommand".into(), cmd.as_str().into());
    run.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("seed".into(), toml::Value::Integer(sim.master_seed as i64));
    run.insert("threads".into(), toml::Value::Integer(crate::parallel::resolve_threads(sim.threads) as i64));
    run.insert("wall_time_s".into(), wall.into());
    run.insert("exit_code".into(), toml::Value::Integer(status.code() as i64));
    run.insert(
        "artifacts".into(),
        toml::Value::Array(artifacts.iter().map(|a| toml::Value::String(a.clone())).collect()),
    );
    let mut top = toml::Table::new();
    top.insert("run".into(), toml::Value::Table(run));
    let echo: toml::Table = toml::from_str(&cfg.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
    top.insert("config".into(), toml::Value::Table(echo));
    let text = toml::to_string(&top).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

fn simulate(run: &mut Run) -> Result<()> {
    let s = &run.cfg.simulate;
    let z0 = run.phase(&s.z0, "simulate.z0")?;
    let mut sim = run.sim.clone();
    sim.t_final = s.record_times.iter().copied().fold(0.0, f64::max);
    let ens = dynamics::simulate_ensemble(&z0, &run.p, &sim, &s.record_times)?;
    let include_j = s.include_j;
    let header = dynamics::ensemble_csv_header(run.p.dim, include_j);
    run.artifact("ensemble.csv", header, |b| ens.write_csv(b, include_j))?;
    run.row("n_paths", ens.n_paths, Provenance::Configured, RowStatus::Info);
    let last = ens.record_times.len() - 1;
    let mean_sq = (0..ens.n_paths).map(|i| ens.state(i, last).iter().map(|c| c * c).sum::<f64>()).sum::<f64>()
        / ens.n_paths as f64;
    run.row("mean_sq_norm_final", fmt_f64(mean_sq), Provenance::Measured, RowStatus::Info);
    Ok(())
}

fn lyapunov_cmd(run: &mut Run) -> Result<()> {
    let lp = run.lyapunov_params()?;
    let c = &run.cfg.lyapunov;
    let grid = lyapunov::square_grid(run.p.dim, c.grid_half_width, c.grid_n);
    let mut sim = run.sim.clone();
    sim.scheme = dynamics::Scheme::EulerMaruyama;
    let rep = lyapunov::verify_drift_times(&run.p, &lp, &c.times, &grid, &sim)?;
    run.artifact(
        "drift.csv",
        state_header(&["t"], run.p.dim, &["lhs_estimate", "lhs_ucb", "rhs", "slack", "pass"]),
        |b| rep.write_csv(b),
    )?;
    for (k, v) in [("beta", lp.beta), ("a_star", lp.a_star), ("kappa", lp.kappa), ("c_of_a", lp.c_of_a(lp.a))] {
        run.row(k, fmt_f64(v), Provenance::Derived, RowStatus::Info);
    }
    let ratio = rep.max_ratio() / rep.slack(lyapunov::SlackForm::ConstantCa);
    run.row("drift_ratio_vs_c_of_a", fmt_f64(ratio), Provenance::Measured, status_of(rep.pass, rep.inconclusive));
    let form = rep.form_passed.map_or("none", |f| f.as_str());
    run.row("tightest_form_passed", form, Provenance::Measured, RowStatus::Info);
    Ok(())
}

fn observables(dim: usize, n: usize, seed: u64) -> Vec<QuadraticObservable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    (0..n).map(|_| QuadraticObservable::random(dim, &mut rng)).collect()
}

fn gradient(run: &mut Run) -> Result<()> {
    let c = run.cfg.gradient.clone();
    let fns = observables(run.p.dim, c.observables, run.sim.master_seed);
    let grid = lyapunov::square_grid(run.p.dim, c.grid_half_width, c.grid_n);
    let mut all: Option<gamma2::GradientReport> = None;
    for &t in &c.times {
        let rep = gamma2::verify_gradient_bound(&run.p, t, &fns, &grid, &run.sim)?;
        let margin = rep.rows.iter().map(|r| r.margin()).fold(f64::INFINITY, f64::min);
        run.row(&format!("min_margin_t{t}"), fmt_f64(margin), Provenance::Measured, status_of(rep.pass, false));
        match &mut all {
            None => all = Some(rep),
            Some(a) => {
                a.pass &= rep.pass;
                a.rows.extend(rep.rows);
            }
        }
    }
    let all = all.ok_or_else(|| Error::Config("gradient.times: must be nonempty".into()))?;
    run.row("c_m", fmt_f64(all.c_m), Provenance::Derived, RowStatus::Info);
    run.artifact(
        "gradient.csv",
        state_header(&["t"], run.p.dim, &["fn", "lhs", "rhs", "margin", "pass"]),
        |b| all.write_csv(b),
    )
}

/// `(z, -z)` for `z` on an `n x n` grid over `[-radius, radius]^2` in the
/// first coordinate pair.
pub fn coupling_pairs(dim: usize, radius: f64, n: usize) -> Vec<(PhaseState, PhaseState)> {
    lyapunov::square_grid(dim, radius, n)
        .into_iter()
        .map(|z| {
            let neg = PhaseState::new(z.x.iter().map(|c| -c).collect(), z.v.iter().map(|c| -c).collect()).unwrap();
            (z, neg)
        })
        .collect()
}

fn coupling(run: &mut Run) -> Result<()> {
    let c = run.cfg.coupling.clone();
    let lp = run.lyapunov_params()?;
    let ev = RhoEvent { r: run.r(&lp), lp, radius: c.ball_radius };
    let mut rows = Vec::new();
    for (z1, z2) in coupling_pairs(run.p.dim, c.radius, c.grid_n) {
        rows.push(malliavin::coupling_probability(&run.p, &z1, &z2, c.t, c.delta, &run.sim, Some(&ev))?);
    }
    let min_e = rows.iter().map(|r| r.euclidean.lo).fold(f64::INFINITY, f64::min);
    let min_r = rows.iter().filter_map(|r| r.rho_r.map(|c| c.lo)).fold(f64::INFINITY, f64::min);
    let incon = rows.iter().any(|r| r.inconclusive);
    run.row("min_ci_lo_euclidean", fmt_f64(min_e), Provenance::Measured, status_of(min_e > 0.0, incon));
    run.row("min_ci_lo_rho_r", fmt_f64(min_r), Provenance::Measured, status_of(min_r > 0.0, incon));
    run.row("r", fmt_f64(ev.r), Provenance::Derived, RowStatus::Info);
    let m = 2 * run.p.dim;
    let mut header = vec!["event".to_string()];
    header.extend((1..=m).map(|i| format!("z1_{i}")));
    header.extend((1..=m).map(|i| format!("z2_{i}")));
    header.extend(["t", "delta", "p_hat", "ci_lo", "ci_hi"].map(String::from));
    run.artifact("coupling.csv", header, |b| malliavin::write_prob_csv(&rows, b))
}

fn initial_law(z: &[f64], std: f64) -> InitialLaw {
    if std > 0.0 {
        InitialLaw::Gaussian { mean: z.to_vec(), std }
    } else {
        InitialLaw::Dirac { z: z.to_vec() }
    }
}

fn metric_params(run: &Run, lp: LyapunovParams) -> Result<MetricParams> {
    let r = run.r(&lp);
    let delta = run.cfg.metric.delta.unwrap_or_else(|| certify::delta_max(gamma2::c_m(run.p.hess_bound), &lp));
    MetricParams::new(lp, r, delta, run.cfg.metric.beta_w.unwrap_or(0.5))
}

fn decay_curve(run: &Run, sim: &SimConfig) -> Result<certify::DecayCurve> {
    let c = &run.cfg.rate;
    run.phase(&c.z_a, "rate.z_a")?;
    run.phase(&c.z_b, "rate.z_b")?;
    let grounds: Vec<GroundMetric> = c
        .grounds
        .iter()
        .map(|g| g.parse().map_err(|_| Error::Config(format!("rate.grounds: unknown ground metric `{g}`"))))
        .collect::<Result<_>>()?;
    let mp = if grounds.iter().any(|g| *g != GroundMetric::Euclidean) {
        Some(metric_params(run, lyapunov::derive_params(&run.p)?)?)
    } else {
        None
    };
    let t_grid = c.t_grid()?;
    let mut sim = sim.clone();
    sim.t_final = *t_grid.last().unwrap();
    certify::measure_decay(
        &run.p,
        &initial_law(&c.z_a, c.init_std),
        &initial_law(&c.z_b, c.init_std),
        &t_grid,
        &sim,
        &grounds,
        mp.as_ref(),
    )
}

fn decay_header() -> Vec<String> {
    ["t", "ground", "w1", "noise_floor", "in_window"].map(String::from).to_vec()
}

fn decay_rows(run: &mut Run, curve: &certify::DecayCurve) {
    for f in &curve.fits {
        let st = if f.inconclusive { RowStatus::Inconclusive } else { RowStatus::Info };
        run.row(&format!("rate_{}", f.ground), fmt_f64(f.rate), Provenance::Measured, st);
        run.row(&format!("rate_ci_{}", f.ground), fmt_f64(f.ci), Provenance::Measured, st);
        run.row(&format!("fit_window_{}", f.ground), f.window, Provenance::Measured, RowStatus::Info);
    }
}

fn rate(run: &mut Run) -> Result<()> {
    let sim = run.sim.clone();
    let curve = decay_curve(run, &sim)?;
    decay_rows(run, &curve);
    run.artifact("decay.csv", decay_header(), |b| curve.write_csv(b))
}

fn certify_cmd(run: &mut Run) -> Result<()> {
    let c = run.cfg.certify.clone();
    let opts = CertifyOptions {
        r: run.cfg.metric.r,
        grid_half_width: c.grid_half_width,
        grid_n: c.grid_n,
        coupling_pairs: c.coupling_pairs,
        ..CertifyOptions::default()
    };
    let cert = certify::assemble(&run.p, &run.sim, &opts)?;
    std::fs::write(run.dir.join("certificate.txt"), cert.to_key_value())?;
    run.artifacts.push("certificate.txt".into());
    for (k, v) in [("beta", cert.lp.beta), ("kappa", cert.lp.kappa), ("delta", cert.mp.delta), ("t_cert", cert.t_cert)] {
        run.row(k, fmt_f64(v), Provenance::Derived, RowStatus::Info);
    }
    for (k, v) in [
        ("c_drift", cert.c_drift),
        ("a_coupling", cert.a_coupling),
        ("beta_w", cert.mp.beta_w),
        ("gamma", cert.gamma()),
        ("ln_c_final", cert.ln_c_final),
    ] {
        run.row(k, fmt_f64(v), Provenance::Measured, RowStatus::Info);
    }
    run.row("drift_form", &cert.drift_form, Provenance::Measured, RowStatus::Info);
    let positive = cert.lambda_final > 0.0;
    run.row("lambda_final", fmt_f64(cert.lambda_final), Provenance::Measured, status_of(positive, false));
    if c.decay {
        let mut sim = run.sim.clone();
        sim.n_paths = c.decay_paths;
        let curve = decay_curve(run, &sim)?;
        decay_rows(run, &curve);
        run.artifact("decay.csv", decay_header(), |b| curve.write_csv(b))?;
        if let Some(f) = curve.fits.first() {
            let ok = cert.lambda_final <= f.rate + f.ci;
            run.row(
                "lambda_final_below_empirical",
                format!("{} <= {}", fmt_f64(cert.lambda_final), fmt_f64(f.rate + f.ci)),
                Provenance::Measured,
                status_of(ok, f.inconclusive),
            );
        }
    }
    Ok(())
}

/// Fast internal consistency checks: `(name, pass, detail)`.
pub fn selftest_checks(p: &PotentialSpec, threads: Option<usize>) -> Result<Vec<(String, bool, String)>> {
    let mut out = Vec::new();
    let mut check = |name: &str, pass: bool, detail: String| out.push((name.to_string(), pass, detail));

    let lp = lyapunov::derive_params(p)?;
    check("lyapunov_params_finite", lp.beta > 0.0 && lp.a_star > 0.0 && lp.kappa.is_finite(), fmt_f64(lp.beta));

    let m = 2 * p.dim;
    let z: Vec<f64> = (0..m).map(|i| 0.3 * i as f64 - 0.2).collect();
    let rho = metric::rho_upper(&z, &z, p, &lp, 0.5).value;
    check("rho_vanishes_on_diagonal", rho == 0.0, fmt_f64(rho));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for n in 1..=6 {
        use rand::Rng;
        let c: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let cost = |i: usize, j: usize| c[i * n + j];
        let lazy = metric::solve_lazy(n, cost, 2, threads)?;
        let (brute, _) = metric::brute_force(&c, n);
        worst = worst.max((lazy.total_cost - brute).abs());
    }
    check("matcher_equals_brute_force", worst <= 1e-12, fmt_f64(worst));

    let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.91).cos() + 0.2).collect();
    let sorted = metric::wasserstein1_1d_euclidean(&a, &b)?;
    let general = metric::wasserstein1(&a, &b, 1, |x, y| (x[0] - y[0]).abs(), threads)?;
    check("w1_one_dimensional_sorted", (sorted - general).abs() <= 1e-12, fmt_f64(sorted - general));

    let (_, s_exact) = dynamics::exact_moments_quadratic([1.0, 0.0], 1.0, 2f64.sqrt());
    let (_, s_em) = dynamics::euler_moments_quadratic([1.0, 0.0], 1.0, 1e-4, 2f64.sqrt());
    let gap = s_exact.iter().zip(&s_em).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    check("euler_moments_converge", gap < 1e-3, fmt_f64(gap));

    let f = QuadraticObservable::random(p.dim, &mut rng);
    let zs = PhaseState::from_slice(&z)?;
    let g2 = gamma2::gamma2(&f, p, &zs);
    let lb = gamma2::gamma2_lower_bound(&f, p.hess_bound, &zs);
    check("gamma2_lower_bound", g2 >= lb - 1e-9 * (1.0 + lb.abs()), format!("{} >= {}", fmt_f64(g2), fmt_f64(lb)));

    let cfg = SimConfig { n_paths: 32, t_final: 0.5, threads: Some(1), ..SimConfig::default() };
    let z0 = PhaseState::from_slice(&z)?;
    let one = dynamics::simulate_ensemble(&z0, p, &cfg, &[0.5])?;
    let many = dynamics::simulate_ensemble(&z0, p, &SimConfig { threads: Some(3), ..cfg }, &[0.5])?;
    check("worker_count_invariance", one.samples_at(0) == many.samples_at(0), String::new());
    Ok(out)
}

fn selftest(run: &mut Run) -> Result<()> {
    for (name, pass, detail) in selftest_checks(&run.p, run.sim.threads)? {
        run.row(&name, detail, Provenance::Measured, status_of(pass, false));
    }
    Ok(())
}
