//! Error type shared across the workspace.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WdroError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "sampling stalled: acceptance rate {rate:.3e} below floor {floor:.3e} \
         after {proposals} proposals"
    )]
    SamplingStalled {
        rate: f64,
        floor: f64,
        proposals: u64,
    },

    #[error("unimplemented: {0}")]
    Unimplemented(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("dual unbounded: objective still decreasing at lambda = {lambda_max:.3e}")]
    UnboundedDual { lambda_max: f64 },

    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),

    #[error("empty grid")]
    EmptyGrid,

    #[error("infeasible grid: no grid-supported distribution lies within the budget of the data")]
    InfeasibleGrid,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WdroError>;
