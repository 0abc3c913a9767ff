use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{op} needs at least {needed} nodes, graph has {found}")]
    TooFewNodes {
        op: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("text swap ({scope}): {needed} disjoint pairs requested but only {available} are eligible (short by {})", needed - available)]
    SwapShortfall {
        scope: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("semantic connect: {k} edges requested but only {pairs} node pairs exist")]
    TooManyEdges { k: usize, pairs: usize },

    #[error("covariance factorization failed; increase the covariance regularizer (currently {0:e})")]
    Factorization(f64),

    #[error("full hypernetwork needs {needed} generated weights, above the budget of {budget}; enable low-rank mode")]
    HyperBudget { needed: usize, budget: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("metric {metric}: {reason}")]
    Metric {
        metric: &'static str,
        reason: &'static str,
    },
}
