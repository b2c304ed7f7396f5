use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("state trace is {trace}, expected 1")]
    TraceNotUnit { trace: f64 },

    #[error("state has eigenvalue {value:.3e} below -{threshold:.1e}")]
    NegativeEigenvalue { value: f64, threshold: f64 },

    #[error("generator {index} does not commute with H (||[G,H]|| = {norm:.3e})")]
    NonCommutingGenerator { index: usize, norm: f64 },

    #[error("degenerate Gram determinant: {0}")]
    DegenerateGram(String),

    #[error("basis does not span the required operator space: {0}")]
    RankDeficientBasis(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quantity is undefined: {0}")]
    Undefined(String),

    #[error("step size underflow at t = {t:.6e} (dt = {dt:.3e})")]
    StepUnderflow { t: f64, dt: f64 },

    #[error("invariant drift of {quantity} reached {value:.3e} (limit {limit:.1e}) at t = {t:.6e}")]
    DriftExceeded { quantity: String, value: f64, limit: f64, t: f64 },
}

pub type Result<T> = std::result::Result<T, SeaError>;
