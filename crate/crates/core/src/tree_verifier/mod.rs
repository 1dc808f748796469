//! Exact verification on finite trees.
//!
//! Primal and dual value fields are computed by backward dynamic
//! programming; the checks compare them with the field itself
//! (self-generation), with each other (conjugacy, weak duality) and with
//! the entropy characterization of exponential forward performances.

mod checks;
mod construct;
mod dual;
mod entropy;
mod primal;

use std::sync::Arc;

use thiserror::Error;

use crate::fields::{
    ConjugateOptions, DualSlice, ExponentialDual, ExponentialFieldParams, FieldError, NumericDual, UtilitySlice,
};
use crate::numeric::NumericError;
use crate::tree_market::{EventTree, MarketError, TreeMeasure};

pub use checks::{
    check_exponential_conditions, check_forward_supermartingale, check_self_generation_dual,
    check_self_generation_primal, check_value_conjugacy, check_weak_duality, ConjugacyCheck, DualAttainer,
    ExponentialConditions, TimePair,
};
pub use construct::{
    calibrate_a_shift, forward_measure, inverse_gamma_martingale_extremes, replicate_inverse_gamma, Replication,
};
pub use dual::{
    decompose_density, dual_value, minimum_entropy, minimum_entropy_measure, DualMethod, DualOptions, EntropyTable,
};
pub use entropy::{entropy, EntropyResult};
pub use primal::{primal_value, PrimalMethod, PrimalOptions, PrimalSolver, WealthGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("no martingale measure: {0}")]
    Nflvr(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("wealth grid too small at node '{node}': {detail}")]
    Sizing { node: String, detail: String },
    #[error("E^Q[1/gamma_T] is not a martingale: {0}")]
    InverseGammaNotMartingale(String),
    #[error("convex solver did not converge at node '{node}' after {iterations} iterations (gap {gap:e})")]
    NoConvergence { node: String, iterations: usize, gap: f64 },
    #[error("too many polytope vertices to enumerate ({0})")]
    TooManyVertices(usize),
}

/// A utility random field on the tree: one slice per node.
#[derive(Clone)]
pub enum TreeField {
    Exponential(ExponentialFieldParams),
    /// Arbitrary slices; only nodes at the times that are queried need one.
    Generic(Vec<Option<Arc<dyn UtilitySlice>>>),
}

impl std::fmt::Debug for TreeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeField::Exponential(p) => f.debug_tuple("Exponential").field(p).finish(),
            TreeField::Generic(s) => {
                let defined = s.iter().filter(|x| x.is_some()).count();
                write!(f, "Generic({defined} of {} slices)", s.len())
            }
        }
    }
}

impl From<ExponentialFieldParams> for TreeField {
    fn from(p: ExponentialFieldParams) -> Self {
        TreeField::Exponential(p)
    }
}

impl TreeField {
    pub fn exponential(&self) -> Option<&ExponentialFieldParams> {
        match self {
            TreeField::Exponential(p) => Some(p),
            TreeField::Generic(_) => None,
        }
    }

    pub fn slice(&self, node: usize) -> Result<Arc<dyn UtilitySlice>, FieldError> {
        match self {
            TreeField::Exponential(p) => Ok(Arc::new(p.slice(node)?)),
            TreeField::Generic(s) => s.get(node).cloned().flatten().ok_or(FieldError::UnknownNode(node)),
        }
    }

    pub fn dual(&self, node: usize) -> Result<Arc<dyn DualSlice>, FieldError> {
        match self {
            TreeField::Exponential(p) => {
                let d: ExponentialDual = p.dual(node)?;
                Ok(Arc::new(d))
            }
            TreeField::Generic(_) => Ok(Arc::new(NumericDual::new(self.slice(node)?, ConjugateOptions::default()))),
        }
    }

    pub fn eval(&self, node: usize, x: f64) -> Result<f64, FieldError> {
        Ok(self.slice(node)?.eval(x))
    }

    pub fn eval_dual(&self, node: usize, y: f64) -> Result<f64, FieldError> {
        if !(y >= 0.0) {
            return Err(FieldError::Domain { what: "dual argument", value: y });
        }
        Ok(self.dual(node)?.eval(y))
    }

    pub(crate) fn check_len(&self, tree: &EventTree) -> Result<(), VerifierError> {
        let n = match self {
            TreeField::Exponential(p) => p.len(),
            TreeField::Generic(s) => s.len(),
        };
        if n != tree.len() {
            return Err(VerifierError::Argument(format!("field has {n} nodes, tree has {}", tree.len())));
        }
        Ok(())
    }
}

/// A per-node argument (`ξ` or `η`) for the nodes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeArg {
    Const(f64),
    /// Indexed by node id; entries for nodes not at `t` are ignored.
    PerNode(Vec<f64>),
}

impl NodeArg {
    pub fn at(&self, node: usize) -> f64 {
        match self {
            NodeArg::Const(v) => *v,
            NodeArg::PerNode(v) => v.get(node).copied().unwrap_or(f64::NAN),
        }
    }
}

impl From<f64> for NodeArg {
    fn from(v: f64) -> Self {
        NodeArg::Const(v)
    }
}

/// Value at one node at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValue {
    pub node: usize,
    pub argument: f64,
    /// `+inf` marks a value outside the validated regime.
    pub value: f64,
}

/// Primal or dual value field on `[t, T]`, with its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFieldResult {
    pub t: usize,
    pub big_t: usize,
    pub values: Vec<NodeValue>,
    /// Primal: optimal one-step holding at every node in `[t, T)` along the
    /// optimally controlled wealth.
    pub portfolio: Vec<Option<f64>>,
    /// Dual: conditional optimal measure on every subtree below time `t`.
    pub measure: Option<TreeMeasure>,
    /// Generic primal path: estimated interpolation error of the tables.
    pub interpolation_error: Option<f64>,
    /// Dual: first-order residual and duality gap of the convex solver.
    pub kkt_residual: Option<f64>,
    pub duality_gap: Option<f64>,
}

impl ValueFieldResult {
    pub fn value_at(&self, node: usize) -> Option<f64> {
        self.values.iter().find(|v| v.node == node).map(|v| v.value)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.value.is_finite())
    }
}

pub(crate) fn require_times(tree: &EventTree, t: usize, big_t: usize) -> Result<(), VerifierError> {
    tree.check_times(t, big_t)?;
    Ok(())
}

/// `1/γ` at every node, validated positive.
pub(crate) fn inverse_gammas(params: &ExponentialFieldParams) -> Result<Vec<f64>, VerifierError> {
    params
        .gammas()
        .iter()
        .map(|&g| {
            if g > 0.0 && g.is_finite() {
                Ok(1.0 / g)
            } else {
                Err(VerifierError::Domain(format!("gamma = {g} is not positive")))
            }
        })
        .collect()
}
