//! Simulation of the two-factor diffusion market and of exponential
//! forward performances built on it.
//!
//! The price follows `dS = θ dt + dB`, and a second Brownian motion `W`
//! drives the unhedgeable part of the shift `A`. Coefficients are
//! deterministic and piecewise constant on a grid that refines their
//! breakpoints, so `S`, the densities `Z` and `1/γ` are simulated exactly.

mod coefficients;
mod export;
mod field;
mod paths;
mod regularity;

use thiserror::Error;

pub use coefficients::{CoefficientSpec, PiecewiseConstant, TimeGrid};
pub use export::write_paths_csv;
pub use field::{build_forward_exponential, FieldPaths};
pub(crate) use paths::log_density;
pub use paths::{density_path, simulate_paths, simulate_paths_with, DensityPaths, PathBundle};
pub use regularity::{
    exponential_integrability, validate_regularity, NOVIKOV_EPS, TAG_BOUNDED, TAG_EXP_INTEGRABLE, TAG_NOVIKOV,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ItoError {
    #[error("invalid coefficient specification: {0}")]
    Spec(String),
    #[error("time {time} is not on the simulation grid (step {dt})")]
    Alignment { time: f64, dt: f64 },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("path export failed: {0}")]
    Export(String),
}
