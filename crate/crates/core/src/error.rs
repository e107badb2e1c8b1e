use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tape does not match the parameters it is used with: {0}")]
    StaleTape(String),

    #[error("training diverged: non-finite gradient in layer {layer}")]
    Divergence { layer: usize },

    #[error("non-finite loss at step {step} (last good checkpoint: {last_good})")]
    NonFiniteLoss { step: usize, last_good: String },

    #[error("respiratory state {0} outside [-1, 1]")]
    StateOutOfRange(f64),

    #[error("mean over an empty batch is undefined")]
    EmptyBatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("surrogate signal has a degenerate range (min = max = {0})")]
    DegenerateRange(f64),

    #[error("diaphragm tracking failed on record {record}, column {column}")]
    TrackingFailure { record: usize, column: usize },

    #[error("{sequence} sequence: {source}")]
    InSequence {
        sequence: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("timestamp {t} outside surrogate range [{lo}, {hi}]")]
    Extrapolation { t: f64, lo: f64, hi: f64 },

    #[error("malformed {kind} file {path}: {msg}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            msg: msg.into(),
        }
    }
}
