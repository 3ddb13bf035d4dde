use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file is a WAV container but carries a codec we do not read.
    #[error("unsupported audio encoding: {0}")]
    Decode(String),

    /// Malformed or truncated container.
    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A loss or gradient became NaN or infinite.
    #[error("numerical failure: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 1 for I/O, 2 for configuration
    /// and validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::NonFinite(_) => 3,
            Error::Decode(_)
            | Error::Format(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Size(_)
            | Error::Domain(_)
            | Error::Config(_)
            | Error::Checkpoint(_) => 2,
        }
    }
}
