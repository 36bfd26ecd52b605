use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LgsError>;

#[derive(Debug, Error)]
pub enum LgsError {
    #[error("solver produced a non-finite value at cell {cell}")]
    StabilityViolation { cell: usize },

    #[error("invalid system spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite {what} at index {index}")]
    FatalNumeric { what: String, index: usize },

    #[error("truth has zero norm")]
    DegenerateTruth,

    #[error("mode `{0}` keeps no physics context")]
    NoContextAvailable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empirical error {empirical} exceeds bound {bound} at step {step}")]
    BoundViolated { step: usize, empirical: f64, bound: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint architecture mismatch: expected `{expected}`, found `{found}`")]
    ArchMismatch { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LgsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LgsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        LgsError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures that stem from numerics rather than usage or IO.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            LgsError::StabilityViolation { .. }
                | LgsError::FatalNumeric { .. }
                | LgsError::DegenerateTruth
        )
    }
}

/// Index of the first non-finite entry, if any.
pub(crate) fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}
