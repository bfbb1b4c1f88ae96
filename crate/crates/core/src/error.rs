use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("column `{column}` has zero spread and cannot be standardized")]
    DegenerateScale { column: String },

    #[error("dataset too small: requested {requested} samples, {available} available")]
    Size { requested: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown problem `{0}` (expected one of trig, peaks, ridge)")]
    UnknownProblem(String),

    #[error("invalid weighting mode {0} (expected 1..=13)")]
    InvalidMode(u8),

    #[error("mode {0} has no adaptive objective")]
    NotAdaptive(u8),

    #[error("mode {0} has no epoch schedule")]
    NotScheduled(u8),

    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Divergence { iteration: usize },

    #[error("validation targets have zero norm")]
    DegenerateTarget,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
