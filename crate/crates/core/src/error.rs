use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("incompatible right-hand side: total mass {residual_mass:e} is not zero")]
    IncompatibleRhs { residual_mass: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NormNotConverged { iterations: usize, last_change: f64 },

    #[error("projection onto the dual set failed at node {node:?}: {reason}")]
    ProjectionFailed { node: [usize; 3], reason: String },

    #[error("non-finite iterate detected at step {step}")]
    NotFinite { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("no pixel satisfies g <= {gmax}")]
    EmptySublevelSet { gmax: f64 },

    #[error("curve tracing exceeded {limit} steps")]
    TraceCycle { limit: usize },

    #[error("malformed field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that come from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NormNotConverged { .. }
                | Error::ProjectionFailed { .. }
                | Error::NotFinite { .. }
                | Error::TraceCycle { .. }
        )
    }
}
