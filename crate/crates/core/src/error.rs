use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (shapes, signs, monotonicity, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Iterative solver exhausted its budget. The best iterate is kept by the caller.
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Total target mass exceeds what the gradient box can host.
    #[error("infeasible target: total mass {mass:.6e} exceeds gradient budget {budget:.6e}")]
    Infeasible { mass: f64, budget: f64 },

    /// A schedule or lattice would exceed the configured resource caps.
    #[error("resource budget exceeded: {0}")]
    Budget(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
