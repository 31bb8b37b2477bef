use std::fmt;

use advlogo_core::Error as CoreError;

/// CLI-level error with a stable exit-code mapping:
/// 2 config/usage, 3 parse (OBJ/PNG/weights), 4 numeric, 5 io,
/// 1 quality gate (e.g. detector recall below the bar).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Parse(String),
    Numeric(String),
    Io(String),
    QualityGate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::QualityGate(_) => 1,
            CliError::Config(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::QualityGate(m) => write!(f, "quality gate: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Parse { .. } | CoreError::UnsupportedFace { .. } | CoreError::Encoding(_) => {
                CliError::Parse(e.to_string())
            }
            CoreError::NonFinite(_) => CliError::Numeric(e.to_string()),
            CoreError::Dimension(_)
            | CoreError::Domain(_)
            | CoreError::Index(_)
            | CoreError::State(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}
