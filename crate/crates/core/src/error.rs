use thiserror::Error;

use crate::spectral::SpectralVelocity;

/// Errors produced by the estimation pipeline and its file formats.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("estimation input error: {0}")]
    EstimationInput(String),

    /// The normal system carries no usable information for some mode.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// The iterative solver stopped before reaching its tolerance. The best
    /// iterate seen is kept so callers can still inspect it.
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        best: Box<SpectralVelocity>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FlowError::Argument(msg.into()))
}
