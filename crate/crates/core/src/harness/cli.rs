//! Argument parsing and dispatch for the `hypocert` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand as ClapSubcommand};

use super::{config::ExperimentConfig, emit_report, run, ExitStatus, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hypocert", version, about = "Kinetic Langevin contraction experiments")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Config override `KEY=VALUE` with a dotted key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ClapSubcommand)]
pub enum Command {
    /// Simulate an ensemble and write its trajectories.
    Simulate,
    /// Check the weighted drift inequality on a grid.
    Lyapunov,
    /// Check the pathwise gradient bound.
    Gradient,
    /// Estimate coupling probabilities on a grid of initial pairs.
    Coupling,
    /// Measure the empirical Wasserstein decay rate.
    Rate,
    /// Assemble a contraction certificate.
    Certify,
    /// Fast internal consistency checks.
    Selftest,
    /// Print the summary table of an output directory.
    Report,
}

impl Command {
    fn subcommand(self) -> Option<Subcommand> {
        Some(match self {
            Command::Simulate => Subcommand::Simulate,
            Command::Lyapunov => Subcommand::Lyapunov,
            Command::Gradient => Subcommand::Gradient,
            Command::Coupling => Subcommand::Coupling,
            Command::Rate => Subcommand::Rate,
            Command::Certify => Subcommand::Certify,
            Command::Selftest => Subcommand::Selftest,
            Command::Report => return None,
        })
    }
}

fn load(cli: &Cli) -> crate::Result<ExperimentConfig> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("sim.seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("output.dir={}", toml::Value::String(o.display().to_string())));
    }
    match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => Err(crate::Error::Config("--config is required for this subcommand".into())),
    }
}

/// Parse `args`, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage.code() } else { 0 };
        }
    };
    match cli.command.subcommand() {
        None => {
            let dir = match (&cli.out, &cli.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => match load(&cli) {
                    Ok(c) => PathBuf::from(c.output.dir),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitStatus::Usage.code();
                    }
                },
                (None, None) => PathBuf::from("out"),
            };
            match emit_report(&dir) {
                Ok(t) => {
                    print!("{t}");
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitStatus::Usage.code()
                }
            }
        }
        Some(sub) => {
            let cfg = match load(&cli) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitStatus::Usage.code();
                }
            };
            match run(sub, &cfg) {
                Ok(out) => {
                    for r in &out.rows {
                        println!("{:<32} {:<24} {:?} {:?}", r.quantity, r.value, r.provenance, r.status);
                    }
                    println!("artifacts: {} -> {}", out.artifacts.join(", "), cfg.output.dir);
                    out.status.code()
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    super::exit_status_of(&e).code()
                }
            }
        }
    }
}
