use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input contained NaN or an infinity where a finite value is required.
    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// A vector's norm was too small to normalize.
    #[error("degenerate vector: norm {norm:e} is below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    /// Shapes, dimensions or argument ranges violate an operation's contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The operation is not valid in the current state (e.g. an uninitialized memory bank).
    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    /// A ranking metric is undefined for the given labels (e.g. a single class).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}

pub(crate) use ensure;
