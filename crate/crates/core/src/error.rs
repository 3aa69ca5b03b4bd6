use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DectError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DectError {
    #[error("{what} must be positive, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("attenuation saturated the forward model (max representable projection {max})")]
    Saturated { max: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("conjugate gradient breakdown at iteration {iteration}: p'Ap = {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown phantom or material: {0}")]
    Unknown(String),

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse { source_name: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DectError {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        DectError::Dimension { expected: expected.to_string(), actual: actual.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DectError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(source_name: impl ToString, line: usize, message: impl ToString) -> Self {
        DectError::Parse { source_name: source_name.to_string(), line, message: message.to_string() }
    }
}
