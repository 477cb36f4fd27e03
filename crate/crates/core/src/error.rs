use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid session: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "feature unavailable: {scheme} needs RGBW channels, but device '{device}' reports lux only"
    )]
    FeatureUnavailable {
        scheme: &'static str,
        device: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::FeatureUnavailable { .. } => "feature_unavailable",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Unknown { .. } => "unknown_name",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
