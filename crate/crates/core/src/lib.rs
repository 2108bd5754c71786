//! Kinetic Langevin simulation and numerically verified Wasserstein
//! contraction certificates.

pub mod certify;
pub mod dynamics;
pub mod error;
pub mod gamma2;
pub mod harness;
pub mod linalg;
pub mod lyapunov;
pub mod malliavin;
pub mod metric;
pub mod parallel;
pub mod potentials;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
