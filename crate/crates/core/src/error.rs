use thiserror::Error;

/// Errors surfaced by task construction, training and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or an infeasible combination was requested.
    /// `key` is the dotted path of the offending field.
    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("{0} is not applicable in simplex mode")]
    SimplexNotApplicable(&'static str),

    #[error("theory constants are only available for quadratic tasks")]
    ConstantsUnavailable,

    #[error("non-finite model entry for client {client} at round {round}")]
    NonFinite { round: usize, client: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
