use thiserror::Error;

/// Errors raised by kernels, the tape, model construction and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape, divisibility or range precondition was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation produced a NaN or infinity.
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { node: usize, op: &'static str },

    /// A gradient became NaN or infinite during the backward pass or an update.
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    /// Training hit a non-finite loss or gradient.
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    /// Weights file entries disagree with the expected parameter set.
    #[error("weights mismatch: {0}")]
    Weights(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for returning a [`Error::Contract`] from a format string.
macro_rules! contract {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Contract(format!($($arg)*)))
    };
}

pub(crate) use contract;
