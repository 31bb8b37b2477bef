use alloc::string::String;
use core::fmt;

/// Error type shared by the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor/image shapes do not line up.
    Dimension(String),
    /// Invalid argument value (empty input, out-of-range parameter, ...).
    Domain(String),
    /// Index out of bounds (face ids, vertex ids).
    Index(String),
    /// Malformed input text; carries a 1-based line number where known.
    Parse { line: usize, msg: String },
    /// A face kind the mesh loader does not support.
    UnsupportedFace { line: usize, msg: String },
    /// Malformed binary payload (weights file and friends).
    Encoding(String),
    /// An object was used in the wrong lifecycle state (stale tape,
    /// unfrozen or mismatched coordinate map).
    State(String),
    /// NaN or Inf showed up where only finite values are allowed.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::UnsupportedFace { line, msg } => {
                write!(f, "unsupported face at line {line}: {msg}")
            }
            Error::Encoding(m) => write!(f, "encoding error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
