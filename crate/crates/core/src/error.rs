use thiserror::Error;

/// Errors raised by the analyses in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Exact enumeration was requested above the configured vertex cap.
    #[error("capacity exceeded: {vertices} vertices, cap is {cap}")]
    Capacity { vertices: usize, cap: usize },
    /// A documented precondition of the operation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// The input is well formed but the operation does not support it.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// An iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge: {0}")]
    Convergence(String),
    #[error("invalid input: {0}")]
    Parse(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
