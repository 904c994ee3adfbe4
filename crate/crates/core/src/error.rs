use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target node ({x1}, {x2}) lies outside the source domain")]
    DomainMismatch { x1: f64, x2: f64 },

    #[error("relative error is undefined for a reference field of zero norm")]
    UndefinedMetric,

    #[error("Henyey-Greenstein kernel is singular for |g| = 1 (got g = {0})")]
    SingularKernel(f64),

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("positivity violated: {0}")]
    PositivityViolation(String),

    #[error("transport solver did not converge after {iterations} iterations (last update {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("transport solver diverged at iteration {iterations}")]
    Diverged { iterations: usize },

    #[error("neumann series is not contracting: correction norm {norm:e} after {iterations} terms")]
    SeriesDiverged { iterations: usize, norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
