use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A stack file exists but its contents cannot be used.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config field `{field}`: {msg}")]
    ConfigRange { field: String, msg: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("label volume holds {0} labels, more than the 65535 a 16-bit stack can store")]
    TooManyLabels(usize),

    #[error("phantom cannot be placed: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for configuration
    /// problems, 3 for a broken internal invariant, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::ConfigRange { .. } => 2,
            Error::Invariant(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn range(field: &str, msg: impl Into<String>) -> Self {
        Error::ConfigRange {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}
