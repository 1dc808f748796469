//! Statistical verification of the dual characterization on simulated
//! diffusion paths.
//!
//! Every check reduces to a confidence-interval test on a (weighted) mean
//! of per-path statistics. Antithetic pairs are averaged into a single
//! sample before the standard error is computed, and all sums are pairwise
//! so that results do not depend on the thread count.

mod checks;
mod harness;
mod suite;

use thiserror::Error;

use crate::fields::FieldError;
use crate::ito_engine::ItoError;

pub use checks::{
    check_dual_martingale_at_optimum, check_dual_submartingale, check_forward_drift_mc, check_inverse_gamma_mc,
    forward_drift_target, nu_label, TAG_FORWARD_DRIFT, TAG_INVERSE_GAMMA, TAG_MARTINGALE_AT_OPTIMUM, TAG_SUBMARTINGALE,
};
pub use harness::{
    harness_false_rejection_rate, test_weighted_mean, test_weighted_mean_grouped, z_quantile, Sided, TestResult,
    MIN_PATHS,
};
pub use suite::{default_nu_family, run_mc_suite, McCheck, McSuiteConfig, McSuiteOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error(transparent)]
    Ito(#[from] ItoError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("need at least 100 paths, got {0}")]
    TooFewPaths(usize),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("test refused: {0}")]
    Refused(String),
}
