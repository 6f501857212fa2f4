use std::path::PathBuf;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite action at world {world}, agent {agent}")]
    NonFiniteAction { world: usize, agent: usize },

    #[error("bristle integration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("hydro-lift fit residual {max_residual:.5} exceeds tolerance {tolerance}:\n{report}")]
    FitResidual {
        max_residual: f64,
        tolerance: f64,
        report: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
