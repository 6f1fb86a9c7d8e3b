use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined ratio: AGOP has zero total energy")]
    UndefinedRatio,

    #[error("degenerate alignment input: {0}")]
    DegenerateAlignment(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("degenerate logits: RMS is zero")]
    DegenerateLogits,

    #[error("degenerate AGOP: {0}")]
    DegenerateAgop(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("trial diverged: {0}")]
    Diverged(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("fixture {name}: {reason}")]
    Fixture { name: String, reason: String },

    #[error("malformed table at line {line}: {reason}")]
    Table { line: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
