use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("operator is not invertible (smallest eigenvalue or singular value {smallest:e})")]
    NotInvertible { smallest: f64 },

    #[error("operator is not a solution of phi(X) <= X (min eigenvalue of X - phi(X) is {min_eigenvalue:e})")]
    NotSubinvariant { min_eigenvalue: f64 },

    #[error("map is not contractive: phi(I) <= I fails (max eigenvalue of phi(I) is {max_eigenvalue:e})")]
    NotContractive { max_eigenvalue: f64 },

    #[error("map is not unital: ||phi(I) - I|| = {defect:e}")]
    NotUnital { defect: f64 },

    #[error("map is not power bounded: {0}")]
    NotPowerBounded(String),

    #[error("solution is not pure: ||phi^k(X)|| = {residual:e} after {iterations} iterations")]
    NotPure { residual: f64, iterations: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("iteration did not converge within {iterations} steps (last residual {last_residual:e})")]
    Diverged {
        iterations: usize,
        last_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("row-contraction extraction failed: residual {residual:e}")]
    ExtractionFailed { residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("truncation level {level} is too small: {reason}")]
    LevelTooSmall { level: usize, reason: String },

    #[error("Fock space dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
