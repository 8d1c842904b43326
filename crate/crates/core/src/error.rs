use thiserror::Error;

use crate::data::idx::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("row {row} has norm {norm:e}, too small to normalize")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("invalid label row {row}: {detail}")]
    Label { row: usize, detail: String },

    #[error("config error on `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("line {line}: `{key}`: {detail}")]
    ConfigLine {
        line: usize,
        key: String,
        detail: String,
    },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }
}
