use thiserror::Error;

pub type Result<T> = std::result::Result<T, CalibrationError>;

#[derive(Debug, Error)]
pub enum CalibrationError {
    /// A problem or parameter value falls outside its admissible range.
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dense solver limited to {cap} points but the problem has {n}; use the lowrank solver")]
    DenseTooLarge { n: usize, cap: usize },

    #[error("non-finite input while assembling the system: {0}")]
    Assembly(String),

    /// Cholesky failed on a matrix that should be positive definite by construction.
    #[error("system matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("sampled block is rank deficient for samples {samples:?}")]
    RankDeficient { samples: Vec<usize> },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CalibrationError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CalibrationError::Domain(msg.into())
    }
}
