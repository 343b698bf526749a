use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: label {label:?} is not one of -1/+1 or 0/1")]
    Label { line: usize, label: String },

    #[error("line {line}: feature indices must be strictly increasing ({prev} then {next})")]
    FeatureOrder { line: usize, prev: usize, next: usize },

    #[error("label set {0:?} cannot be mapped to {{-1, +1}}")]
    LabelSet(Vec<String>),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid problem: {0}")]
    Assembly(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("operator cache is stale for the given point")]
    StaleCache,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}
