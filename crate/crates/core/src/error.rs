use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
///
/// The variants map onto the CLI exit codes: configuration problems exit with
/// code 2, everything else is reported as a failure.
#[derive(Debug, Error)]
pub enum GhqError {
    /// Malformed map, network dimensions that do not line up, or a checkpoint
    /// that does not fit the model it is loaded into.
    #[error("configuration error: {0}")]
    Config(String),
    /// The caller used an API incorrectly (non-scalar loss, empty batch, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// A documented precondition was violated, e.g. an unavailable action was
    /// passed to the environment.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = GhqError> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(GhqError::Config(msg.into()))
}
