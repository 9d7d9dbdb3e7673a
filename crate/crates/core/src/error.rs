use thiserror::Error;

/// Errors surfaced by model construction, solvers, and training loops.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("solver did not converge within {max_iters} iterations (residual {residual:e})")]
    NoConvergence { max_iters: usize, residual: f64 },

    #[error("critic diverged: parameter norm {norm:e} exceeds {limit:e}")]
    CriticDiverged { norm: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
