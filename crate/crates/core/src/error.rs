use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("inconsistent model config: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("tape corrupted at node {node}: {detail}")]
    TapeCorrupt { node: usize, detail: String },

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("weight file tensor `{name}`: {detail}")]
    WeightTensor { name: String, detail: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
