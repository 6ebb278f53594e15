use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("training did not reach accuracy {target:.3} within {steps} steps (best {best:.4})")]
    TrainingFailed { target: f64, steps: usize, best: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fault site ({param_index}, bit {bit}) out of range for a model with {n_params} parameters")]
    SiteOutOfRange { param_index: usize, bit: u8, n_params: usize },

    #[error("fault set was not applied to this model (or was already reverted)")]
    NotApplied,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("illegal SystemVerilog identifier `{0}`")]
    IllegalIdentifier(String),

    #[error("failed to parse {what} at line {line}, column {column}: {message}")]
    Parse { what: String, line: usize, column: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json_parse(what: &str, err: &serde_json::Error) -> Self {
        Error::Parse {
            what: what.to_string(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
