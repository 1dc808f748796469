//! Finite event-tree markets with a single risky asset.
//!
//! The price is quoted in units of a riskless numéraire fixed at one, so a
//! market is fully described by its tree, the reference branch
//! probabilities and the price increment on every branch. Martingale
//! measures are described node by node: on a finite tree the set of
//! absolutely continuous martingale measures is the product of the one-step
//! polytopes, after removing branches into subtrees where no martingale
//! measure exists.

mod lp;
mod measure;
mod polytope;
mod tree;

use thiserror::Error;

pub use lp::{maximize, LpOutcome};
pub use measure::{density_martingale_residual, density_process, density_quotient, DensityPath, TreeMeasure};
pub use polytope::{
    check_nflvr, max_leaf_mass, maximal_support, measure_polytope, one_step_max_mass, one_step_positivity_margin,
    one_step_vertices, MeasurePolytope, NodePolytope, SUPPORT_TOL,
};
pub use tree::{validate_tree, EventTree, Node, NodeSpec, TreeBuilder, TreeFile, TREE_FILE_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("malformed tree: {0}")]
    Structure(String),
    #[error("tree file parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("no martingale measure exists below node '{0}'")]
    NoMartingaleMeasure(String),
}
