use maxacc::{FiniteError, LinearError, MarkovError, SimError};
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INVALID: u8 = 1;
    pub const UNDECIDED: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error in {field}: {message}")]
    Schema { field: String, message: String },
    #[error("model invariant violated in {field}: {message}")]
    ModelInvariant { field: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) | CliError::Io(_) => exit::NUMERICAL,
            _ => exit::INVALID,
        }
    }
}

impl From<LinearError> for CliError {
    fn from(e: LinearError) -> Self {
        match e {
            LinearError::InvalidArgument(m) => CliError::Usage(m),
            LinearError::DimensionMismatch(_)
            | LinearError::RankDeficientDorH(_)
            | LinearError::NotDetectableOrStabilizable { .. }
            | LinearError::NotDetectable => {
                CliError::ModelInvariant { field: "linear_gaussian".into(), message: e.to_string() }
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<MarkovError> for CliError {
    fn from(e: MarkovError) -> Self {
        match e {
            MarkovError::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::ModelInvariant { field: "finite".into(), message: other.to_string() },
        }
    }
}

impl From<FiniteError> for CliError {
    fn from(e: FiniteError) -> Self {
        match e {
            FiniteError::Model(m) => m.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Analysis(a) => a.into(),
            SimError::InvalidParameter(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
