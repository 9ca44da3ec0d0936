use thiserror::Error;

use crate::field::CellField;

pub type Result<T> = std::result::Result<T, FilmError>;

#[derive(Debug, Error)]
pub enum FilmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("input has nonzero mean {mean:e} (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("invalid preconditioner coefficients a0={a0}, a1={a1}, a2={a2}")]
    InvalidCoefficients { a0: f64, a1: f64, a2: f64 },

    #[error("dense oracle limited to {max} unknowns, grid has {got}")]
    GridTooLarge { max: usize, got: usize },

    #[error("field has a nonpositive entry {value:e} at index {index}")]
    NonPositiveField { index: usize, value: f64 },

    #[error("positivity lost: {0}")]
    PositivityLost(String),

    #[error("solver did not converge in {iters} iterations (residual {residual:e})")]
    MaxItersExceeded {
        iters: usize,
        residual: f64,
        best: Box<CellField>,
    },

    #[error("nonlinear solve diverged after {iters} iterations (residual {residual:e})")]
    SolverDiverged { iters: usize, residual: f64 },

    #[error("line search bracket collapsed at alpha={alpha:e} with g={g:e}")]
    BarrierCollapse { alpha: f64, g: f64 },

    #[error("BDF2 step requires two history levels")]
    MissingHistory,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-positive value {value:e} at t={t}")]
    NonPositiveValue { t: f64, value: f64 },

    #[error("run stopped at t={t} after exceeding its wall-clock budget")]
    Unfinished { t: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FilmError {
    /// True for failures of the nonlinear solve itself.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            FilmError::MaxItersExceeded { .. }
                | FilmError::SolverDiverged { .. }
                | FilmError::BarrierCollapse { .. }
        )
    }
}
