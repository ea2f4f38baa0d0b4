use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A desk-scale guard (enumeration size, expected point count, ...) was exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// The Stein derivative was requested exactly at its jump.
    #[error("jump point at w = z = {z}: left limit {left}, right limit {right}")]
    JumpPoint { z: f64, left: f64, right: f64 },

    #[error("covariance factorization failed (smallest eigenvalue {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("config error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
