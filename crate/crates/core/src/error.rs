use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed MGRD payload; `field` names the header field or section at fault.
    #[error("{path}: invalid grid file ({field}): {detail}")]
    Format {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },

    #[error("failed to load {file}: {detail}")]
    Load { file: String, detail: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Trimming removed every row or column of a sample.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("rotation estimate unavailable: {0}")]
    Estimation(String),

    /// No valid elevation remains to fill from.
    #[error("unrecoverable sample: {0}")]
    Unrecoverable(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("config error: {0}")]
    Config(String),

    /// Overlapping samples landed in different splits.
    #[error("split leakage: {}", .0.join("; "))]
    Leakage(Vec<String>),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
