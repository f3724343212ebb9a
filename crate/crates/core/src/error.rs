use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("weight load error for {path}: {reason}")]
    WeightLoad { path: PathBuf, reason: String },

    #[error("parameter `{name}` shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss at step {step}; last good checkpoint: {last_checkpoint:?}")]
    NonFiniteLoss {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
