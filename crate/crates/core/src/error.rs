use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("node {input} is not reachable from node {output}")]
    Unreachable { output: usize, input: usize },

    #[error("invalid schedule: radicand {radicand} at t={t} is not positive")]
    Schedule { t: usize, radicand: f64 },

    #[error("intensity t={t} outside [0, {t_max}]")]
    IntensityOutOfRange { t: usize, t_max: usize },

    #[error("transform `{kind}` is not invertible")]
    NotInvertible { kind: &'static str },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("{op} needs at least {needed} samples, got {got}")]
    BatchTooSmall { op: &'static str, needed: usize, got: usize },

    #[error("grid geometry mismatch: {0}")]
    GridMismatch(String),

    #[error("grid is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint parse error: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch in field `{field}`: checkpoint has {found}, expected {expected}")]
    ArchitectureMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("non-finite loss at iteration {iteration} (diagnostic dump: {dump:?})")]
    NumericalAbort {
        iteration: u64,
        dump: Option<PathBuf>,
    },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
