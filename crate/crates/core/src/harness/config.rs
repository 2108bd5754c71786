//! Experiment configuration.
//!
//! TOML with one table per concern. Every key has a default except
//! `version` and `potential.name`; unknown keys are rejected. Overrides use
//! dotted paths, e.g. `--set sim.n_paths=5000`, and values are parsed as
//! TOML (falling back to a bare string).
//!
//! ```toml
//! version = "1"
//!
//! [potential]
//! name = "bump_double_well"   # quadratic | quartic | bump_double_well
//! dim = 1
//! amplitude = 2.0
//! width = 1.0
//!
//! [sim]
//! dt = 0.01
//! n_paths = 1000
//! seed = 0
//! scheme = "euler_maruyama"   # or exact_ou (quadratic only)
//! threads = 0                 # 0: HYPOCERT_THREADS or all cores
//! ```
//!
//! Remaining tables: `[metric]`, `[simulate]`, `[lyapunov]`, `[gradient]`,
//! `[coupling]`, `[rate]`, `[certify]`, `[output]`; see the structs below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::potentials::{self, PotentialSpec};

/// Config format understood by this build.
pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: String,
    pub potential: PotentialSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub metric: MetricSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub lyapunov: LyapunovSection,
    #[serde(default)]
    pub gradient: GradientSection,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub certify: CertifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "two")]
    pub amplitude: f64,
    #[serde(default = "one_f")]
    pub width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub sigma: f64,
    pub threads: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        SimSection {
            dt: s.dt,
            t_final: s.t_final,
            n_paths: s.n_paths,
            seed: s.master_seed,
            scheme: s.scheme,
            sigma: s.sigma,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSection {
    /// Weight exponent of `ρ_r`; absent means `λ_lo / (2 λ_hi)`.
    pub r: Option<f64>,
    /// Small-distance threshold; absent means the largest admissible value.
    pub delta: Option<f64>,
    /// Weight of `ρ_r` in the metric `d`.
    pub beta_w: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub z0: Vec<f64>,
    pub record_times: Vec<f64>,
    pub include_j: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { z0: vec![1.0, 0.0], record_times: vec![0.5, 1.0], include_j: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub times: Vec<f64>,
    pub grid_half_width: f64,
    pub grid_n: usize,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        LyapunovSection { times: vec![0.25, 0.5, 1.0], grid_half_width: 2.0, grid_n: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientSection {
    pub times: Vec<f64>,
    pub observables: usize,
    pub grid_half_width: f64,
    pub grid_n: usize,
}

impl Default for GradientSection {
    fn default() -> Self {
        GradientSection { times: vec![0.5, 1.0, 2.0, 10.0], observables: 8, grid_half_width: 1.0, grid_n: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingSection {
    pub t: f64,
    pub delta: f64,
    /// Initial pairs are `(z, -z)` for `z` on a `grid_n x grid_n` grid over
    /// `[-radius, radius]^2`.
    pub radius: f64,
    pub grid_n: usize,
    /// Ball containing both endpoints in the weighted event.
    pub ball_radius: f64,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection { t: 1.0, delta: 0.5, radius: 2.0, grid_n: 3, ball_radius: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub z_a: Vec<f64>,
    pub z_b: Vec<f64>,
    /// Standard deviation of Gaussian initial laws; 0 gives point masses.
    pub init_std: f64,
    pub t_start: f64,
    pub t_stop: f64,
    pub t_step: f64,
    pub grounds: Vec<String>,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            z_a: vec![3.0, 0.0],
            z_b: vec![-3.0, 0.0],
            init_std: 0.0,
            t_start: 0.0,
            t_stop: 8.0,
            t_step: 0.5,
            grounds: vec!["euclidean".into()],
        }
    }
}

impl RateSection {
    pub fn t_grid(&self) -> Result<Vec<f64>> {
        if !(self.t_step > 0.0 && self.t_stop >= self.t_start && self.t_start >= 0.0) {
            return Err(Error::Config("rate: need t_step > 0 and 0 <= t_start <= t_stop".into()));
        }
        let n = ((self.t_stop - self.t_start) / self.t_step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.t_start + i as f64 * self.t_step).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySection {
    pub coupling_pairs: usize,
    pub grid_half_width: f64,
    pub grid_n: usize,
    /// Also measure the empirical decay curve (uses `[rate]`).
    pub decay: bool,
    /// Paths per ensemble for the decay curve.
    pub decay_paths: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        let o = crate::certify::CertifyOptions::default();
        CertifySection {
            coupling_pairs: o.coupling_pairs,
            grid_half_width: o.grid_half_width,
            grid_n: o.grid_n,
            decay: true,
            decay_paths: 4096,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

/// Apply `KEY=VALUE` with a dotted key path to a TOML table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parse text, apply overrides, and validate.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: config format `{}` is not supported (expected `{CONFIG_VERSION}`)",
                self.version
            )));
        }
        if self.potential.name.trim().is_empty() {
            return Err(Error::Config("potential.name: must not be empty".into()));
        }
        self.potential_spec()?;
        Ok(())
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        let built = match p.name.as_str() {
            "quadratic" => potentials::make_quadratic(p.dim),
            "quartic" => potentials::make_quartic(p.dim),
            "bump_double_well" => {
                if p.dim != 1 {
                    return Err(Error::Config("potential.dim: bump_double_well is one-dimensional".into()));
                }
                potentials::make_bump_double_well(p.amplitude, p.width)
            }
            other => return Err(Error::Config(format!("potential.name: unknown potential `{other}`"))),
        };
        built.map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("potential: {m}")),
            other => other,
        })
    }

    /// The simulation config; `HYPOCERT_THREADS` takes precedence over
    /// `sim.threads`.
    pub fn sim_config(&self) -> SimConfig {
        let env = std::env::var(crate::parallel::THREADS_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        let threads = env.or((self.sim.threads > 0).then_some(self.sim.threads));
        SimConfig {
            dt: self.sim.dt,
            t_final: self.sim.t_final,
            n_paths: self.sim.n_paths,
            master_seed: self.sim.seed,
            scheme: self.sim.scheme,
            sigma: self.sim.sigma,
            threads,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "version = \"1\"\n[potential]\nname = \"quadratic\"\n";

    #[test]
    fn minimal_config_and_override() {
        let c = ExperimentConfig::parse(MIN, &["sim.n_paths=77".into(), "output.dir=runs/a".into()]).unwrap();
        assert_eq!(c.sim.n_paths, 77);
        assert_eq!(c.output.dir, "runs/a");
    }

    #[test]
    fn missing_name_mentions_field() {
        let e = ExperimentConfig::parse("version = \"1\"\n[potential]\ndim = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("name"), "{e}");
    }

    #[test]
    fn wrong_version_rejected() {
        let e = ExperimentConfig::parse("version = \"0\"\n[potential]\nname = \"quadratic\"\n", &[]).unwrap_err();
        assert!(e.to_string().contains("version"));
    }
}
