use std::path::PathBuf;

use chrono::{DateTime, Utc};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("station reports no capacity (0 bikes and 0 free slots)")]
    ZeroCapacity,

    #[error("{0}")]
    Parse(String),

    #[error("{file}:{line}: {reason}")]
    MalformedRow { file: String, line: u64, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown station {0}")]
    UnknownStation(u32),

    #[error("empty sampling window: {0}")]
    EmptyWindow(String),

    #[error("row is missing predictor `{0}`")]
    MissingPredictor(String),

    #[error("no weather forecast covers {} prediction instant(s), first {}", .0.len(), .0[0])]
    MissingForecast(Vec<DateTime<Utc>>),

    #[error("series too short: need more than {needed} points, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("too many gaps in series: {gaps} of {len} cells unobserved")]
    TooManyGaps { gaps: usize, len: usize },

    #[error("every candidate ARIMA fit was flagged (degenerate or not converged)")]
    NoUsableFit,

    #[error("{}: {source}", path.display())]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
