use thiserror::Error;

/// Failures raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A variance that is about to be divided by collapsed to (almost) zero.
    ///
    /// `step` is the number of observations consumed when the collapse was
    /// detected, if the failure happened inside a filter chain.
    #[error("degenerate variance {variance:e}{}", step.map(|t| format!(" at step {t}")).unwrap_or_default())]
    DegenerateVariance { variance: f64, step: Option<usize> },

    #[error("covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("covariance is not symmetric positive semidefinite: {0}")]
    InvalidCovariance(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no solution for the linear trend (residual {residual:e}, rank {rank})")]
    NoSolution { residual: f64, rank: usize },

    #[error("noise variance {0:e} is negative beyond tolerance")]
    NegativeSigma2(f64),

    #[error("matrix expected to be symmetric deviates by {0:e}")]
    AsymmetryDetected(f64),

    #[error("invalid trace set: {0}")]
    InvalidTraceSet(String),

    #[error("random system generation failed: {0}")]
    Generation(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Attach a time index to a [`Error::DegenerateVariance`]; other variants pass through.
    pub fn at_step(self, t: usize) -> Self {
        match self {
            Error::DegenerateVariance { variance, .. } => Error::DegenerateVariance {
                variance,
                step: Some(t),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
