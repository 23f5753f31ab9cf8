use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}: {content:?}")]
    MalformedLine {
        line: usize,
        content: String,
        reason: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("player {player_id}: unknown token {token:?}")]
    UnknownToken { player_id: String, token: String },

    #[error("empty alphabet after filtering")]
    EmptyAlphabet,

    #[error("zero-length sequence")]
    ZeroLengthSequence,

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment or the caller's files/flags rather than
    /// by the numbers themselves.
    pub fn is_io_or_config(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::MalformedLine { .. } | Error::Json(_) | Error::Csv(_) | Error::Config(_)
        )
    }
}
