use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector extents do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value is structurally invalid (bad stride, bad ratios, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    /// Dataset content violates an invariant; carries the offending location.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A binary or JSON artifact could not be decoded.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
