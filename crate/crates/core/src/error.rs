use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, got {actual}")]
    Dimension {
        field: String,
        expected: usize,
        actual: usize,
    },

    #[error("inconsistent state: {0}")]
    Consistency(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(field: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            field: field.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: PathBuf::from("<input>"),
            line,
            msg: msg.into(),
        }
    }

    /// Attach a file name to a parse error produced from an in-memory reader.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Parse { line, msg, .. } => Error::Parse {
                file: path.into(),
                line,
                msg,
            },
            other => other,
        }
    }

    /// Short stable tag used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Consistency(_) => "consistency",
            Error::Numeric(_) => "numeric",
            Error::Diverged { .. } => "diverged",
            Error::Config(_) => "config",
            Error::UndefinedAuc(_) => "undefined_auc",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}
