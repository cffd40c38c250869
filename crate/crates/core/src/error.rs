//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the tensor substrate, data pipeline, model, and scoring code.
#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation's precondition (shape mismatch, bad range, ...).
    Contract(String),
    /// An operation produced a non-finite value. Carries the op kind and operand shapes.
    Numeric { op: &'static str, detail: String },
    /// A file or directory did not parse as the expected format.
    Data(String),
    /// A checkpoint or dataset is structurally valid but incompatible with the caller.
    Incompatible(String),
    /// A checksum or fingerprint did not match its payload.
    Corrupt(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric { op, detail } => {
                write!(f, "numeric fault in `{op}`: {detail}")
            }
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Incompatible(msg) => write!(f, "incompatible: {msg}"),
            Error::Corrupt(msg) => write!(f, "corrupt artifact: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

/// Shorthand for `Error::Contract` with format args.
#[macro_export]
macro_rules! contract_violation {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}

/// Bail out with a contract violation unless `cond` holds.
#[macro_export]
macro_rules! require {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err($crate::contract_violation!($($arg)*));
        }
    };
}
