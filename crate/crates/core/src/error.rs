use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum CsaError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),

    /// The bet produced a non-positive update factor `1 - lambda * x`.
    #[error("bet {lambda} on increment {x} gives non-positive factor {factor}")]
    NonPositiveFactor { lambda: f64, x: f64, factor: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CsaError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Self::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidParameter { .. } => "invalid_parameter",
            Self::InvalidGrid(_) => "invalid_grid",
            Self::NonPositiveFactor { .. } => "non_positive_factor",
            Self::Degenerate(_) => "degenerate",
            Self::Parse { .. } => "parse",
            Self::Validation { .. } => "validation",
            Self::UnknownPreset { .. } => "unknown_preset",
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
            Self::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = CsaError> = std::result::Result<T, E>;

pub(crate) fn check_unit_open(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(CsaError::param(name, format!("must lie in (0, 1), got {value}")))
    }
}
