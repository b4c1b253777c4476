use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("step called on a finished episode (t = {t}, horizon = {horizon})")]
    EpisodeFinished { t: usize, horizon: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error comes from configuration or input files rather than
    /// from the numerical run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::ShapeMismatch { .. }
                | Error::Io { .. }
                | Error::Json { .. }
        )
    }
}
