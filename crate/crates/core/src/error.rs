use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box corners: ({x1}, {y1}, {x2}, {y2}) requires x1 <= x2 and y1 <= y2")]
    InvalidCorners { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ground truth {index} carries the unknown label; matching needs known classes")]
    UnknownLabel { index: usize },

    #[error("class index {class} out of range for {num_classes} logits")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("invalid value for `{field}`: {value} ({expected})")]
    OutOfRange {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("empty training set")]
    EmptyDataset,

    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Errors caused by bad user input (config, schema, shapes) rather than
    /// runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
