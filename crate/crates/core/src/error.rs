use thiserror::Error;

/// Errors raised by the model, the solvers and the continuation drivers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PelletError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{what}: step size {step:.3e} fell below the admissible minimum")]
    StepUnderflow { what: &'static str, step: f64 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{0}")]
    NotFound(String),
}

pub type Result<T> = std::result::Result<T, PelletError>;
