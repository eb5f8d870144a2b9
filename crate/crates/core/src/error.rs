use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("duplicate trial key (subject {subject}, day {day}, trial {trial})")]
    DuplicateTrial { subject: String, day: u32, trial: u32 },

    #[error("unknown region {0}")]
    UnknownRegion(String),

    #[error("column mismatch: expected {expected}, found {found}")]
    ColumnMismatch { expected: String, found: String },

    #[error("nonpositive intensity {value} at row {row}, column {column}")]
    NonPositiveIntensity { row: usize, column: usize, value: f64 },

    #[error("series too short: {len} samples, need more than {min}")]
    TooShort { len: usize, min: usize },

    #[error("singular system: determinant {det:e}")]
    Singular { det: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }
}
