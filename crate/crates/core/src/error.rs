use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed JSON{}: {source}", path.display(), record_suffix(*record))]
    Json {
        path: PathBuf,
        record: Option<usize>,
        #[source]
        source: serde_json::Error,
    },

    #[error("document {title:?}: invalid {field}: {message}")]
    InvalidDocument { title: String, field: String, message: String },

    #[error("relation registry: {0}")]
    Registry(String),

    #[error("prompt template: {0}")]
    Template(String),

    #[error("{0}")]
    Validation(String),

    #[error("run log {}: line {line}: {message}", path.display())]
    RunLog { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("run interrupted after {0} documents")]
    Interrupted(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid_doc(title: &str, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidDocument { title: title.to_string(), field: field.into(), message: message.into() }
    }
}

fn record_suffix(record: Option<usize>) -> String {
    record.map(|i| format!(" in record {i}")).unwrap_or_default()
}
