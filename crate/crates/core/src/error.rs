use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed {file}: {field}: {detail}")]
    Format {
        file: String,
        field: &'static str,
        detail: String,
    },

    #[error("invalid value for `{key}`: {value} (allowed: {allowed})")]
    Config {
        key: String,
        value: String,
        allowed: String,
    },

    #[error("{0}")]
    Logic(String),

    #[error("round {round}, client {client}, step {step}: {detail}")]
    Round {
        round: usize,
        client: usize,
        step: usize,
        detail: String,
    },

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("run {run}: {source}")]
    InRun { run: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: &str, value: impl ToString, allowed: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            value: value.to_string(),
            allowed: allowed.into(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::Format { .. } => 4,
            Error::InRun { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
