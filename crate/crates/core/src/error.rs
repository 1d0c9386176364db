use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Malformed or incompatible tensor file.
    #[error("tensor format error: {0}")]
    TensorFormat(String),

    /// Malformed checkpoint, or one whose hyperparameters do not match.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::InvalidShape(msg.into())
}

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
