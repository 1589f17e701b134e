use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("unknown {registry} `{name}`")]
    UnknownKind { registry: &'static str, name: String },

    #[error("training diverged at epoch {epoch}: objective = {value}")]
    Divergence { epoch: usize, value: f64 },

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Shape { .. }
                | Error::UnknownKind { .. }
                | Error::Json(_)
                | Error::Layer { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
