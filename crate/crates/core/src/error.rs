use thiserror::Error;

/// Errors raised anywhere in the fluidport pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition (index out of range, shape mismatch).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is missing, malformed or out of range.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Config file could not be parsed; the message carries line/column information.
    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    /// Normalization statistics are degenerate (constant input window).
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// A normalizing reference has zero energy.
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    /// Stored data is inconsistent (hash mismatch, truncated blob, wrong dimensions).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigParse(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
