//! Dense numerical kernels shared by the estimators.

mod cholesky;
mod loss;
mod matrix;
mod optim;
mod ridge;
mod simplex;

use thiserror::Error;

pub use cholesky::{cholesky_psd, clip_eigenvalues, PsdFactor};
pub use loss::{crps_from_quantiles, pinball_grad, pinball_loss, validate_taus};
pub(crate) use loss::pinball_unchecked;
pub use matrix::{dot, norm2, Matrix};
pub use optim::{
    minimize, train_minibatch, BatchObjective, Minimum, Objective, OptimizerConfig, TrainOutcome,
};
pub use ridge::{ridge_solve, RidgeSystem};
pub use simplex::project_simplex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("Cholesky factorisation failed after jitter escalation")]
    FactorizationFailed,
    #[error("linear system is singular")]
    Singular,
    #[error("objective or gradient is not finite")]
    NonFiniteObjective,
    #[error("quantile level {0} outside (0, 1)")]
    BadTau(f64),
    #[error("quantile levels must be strictly increasing")]
    UnsortedTaus,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
}
