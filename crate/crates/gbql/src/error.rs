use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid composition: {0}")]
    InvalidComposition(String),

    /// The reference distribution puts zero mass on a class the observed
    /// composition supports.
    #[error("reference distribution has zero mass at class {index} where the observation is positive")]
    UnsupportedMass { index: usize },

    /// A mixture M'w vanished on the support of a prediction; the parameter
    /// is on the boundary of the parameter space.
    #[error("degenerate mixture at class {class}: parameter lies on the boundary")]
    BoundaryParameter { class: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("Hessian is not positive definite (condition number {condition_number:.3e})")]
    SingularHessian { condition_number: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sampler calibration failed: {0}")]
    Calibration(String),

    #[error("{}:{row}:{column}: {message}", file.display())]
    Input {
        file: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure comes from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedMass { .. }
                | Error::BoundaryParameter { .. }
                | Error::NonIdentifiable(_)
                | Error::SingularHessian { .. }
                | Error::Calibration(_)
        )
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
