use thiserror::Error;

/// Crate-wide error type. Variants are grouped so the CLI can map failures
/// to distinct exit codes (config vs data vs numeric).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error{}: {msg}", match line { Some(l) => format!(" at line {l}"), None => String::new() })]
    Data { line: Option<usize>, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Tape(#[from] tapegrad::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            msg: msg.into(),
        }
    }

    pub fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line: Some(line),
            msg: msg.into(),
        }
    }

    /// Exit-code class for the CLI: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => 3,
            Error::Numeric(_) => 4,
            Error::Tape(tapegrad::Error::NonFinite { .. }) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
