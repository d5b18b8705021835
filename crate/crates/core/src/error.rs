use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("agents {0} and {1} occupy the same position")]
    Coincident(usize, usize),

    #[error("swarm initialization rejected after {attempts} attempts")]
    InitFailed { attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incomplete window: need {needed} consecutive records, got {got}")]
    IncompleteWindow { needed: usize, got: usize },

    #[error("expert cost is zero; normalization undefined")]
    DegenerateExpertCost,

    #[error(
        "non-finite loss at epoch {epoch} (trajectory {trajectory}, window {window}); grad norm {grad_norm}"
    )]
    NonFiniteLoss {
        epoch: usize,
        trajectory: usize,
        window: usize,
        grad_norm: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing checkpoint for sweep cell {0}")]
    MissingCheckpoint(String),

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
