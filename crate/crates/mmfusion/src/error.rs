//! Error type shared across the crate.

use std::fmt;

/// Crate-wide error enum. Variants map onto the CLI's exit-code classes.
#[derive(Debug)]
pub enum Error {
    /// Tensor shape mismatch; the message names the offending shapes.
    Dimension(String),
    /// Bad label string or out-of-range class/row index.
    Label(String),
    /// Violated API precondition (empty split, non-scalar loss, ...).
    Contract(String),
    /// Malformed file content (PGM header, record fields, ...).
    Format(String),
    /// Parse failure at a known line of a record file.
    Parse { line: usize, message: String },
    /// NaN/Inf where finite values are required.
    Numeric(String),
    /// A function expected to be deterministic produced differing outputs.
    Determinism(String),
    /// Unknown config key or inconsistent configuration.
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Label(m) => write!(f, "label error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Determinism(m) => write!(f, "determinism error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
