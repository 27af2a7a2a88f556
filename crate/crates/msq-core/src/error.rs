//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the quantization, kernel, training, and model code.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or tile dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input is structurally valid but too small or empty for the operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Bit widths or scheme parameters outside the supported range.
    #[error("invalid scheme: {0}")]
    Scheme(String),

    /// A value could not be encoded into (or decoded from) a level set.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// Malformed file contents (bad header, truncated payload, wrong dtype).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Bad configuration values (unknown device, out-of-range fraction, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Resource budget cannot accommodate even the base design.
    #[error("infeasible design: {0}")]
    Infeasible(String),

    /// Numeric breakdown (NaN/Inf) outside of training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training loss became non-finite.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
