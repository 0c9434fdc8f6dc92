use thiserror::Error;

use nalgebra::DVector;

/// Errors produced while building problems, evaluating operators or running solvers.
#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("problem has no blocks")]
    EmptyProblem,

    #[error("block {block}: {reason}")]
    BlockDimension { block: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid prox term: {0}")]
    InvalidTerm(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration not valid for variant {variant}: {reason}")]
    Config { variant: String, reason: String },

    #[error("proximal weight beta = {beta} must exceed nu = {nu}")]
    BetaTooSmall { beta: f64, nu: f64 },

    #[error("iteration cap {iterations} reached with residual {residual:e}")]
    IterationCap {
        iterations: usize,
        residual: f64,
        best: DVector<f64>,
    },

    #[error("no finite iterate: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for AdmmError {
    fn from(e: serde_json::Error) -> Self {
        AdmmError::Serialization(e.to_string())
    }
}

impl From<csv::Error> for AdmmError {
    fn from(e: csv::Error) -> Self {
        AdmmError::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AdmmError>;
