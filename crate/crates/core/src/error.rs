use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate pair masses (between = {between:e}, within = {within:e})")]
    DegeneratePairs { between: f64, within: f64 },

    #[error("degenerate weights (class 0 mass = {class0:e}, class 1 mass = {class1:e})")]
    DegenerateWeights { class0: f64, class1: f64 },

    #[error("infeasible constraint set: pinned sum {pinned_sum} exceeds budget {budget}")]
    InfeasibleConstraint { pinned_sum: f64, budget: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dataset contains a single class")]
    SingleClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for the degeneracy family (pair masses or rebalancing weights collapsed).
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePairs { .. } | Error::DegenerateWeights { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
