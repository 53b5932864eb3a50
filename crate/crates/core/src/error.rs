use thiserror::Error;

/// Errors raised by the numeric layers of the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max asymmetry {max_asymmetry:e} exceeds tolerance")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular or not positive definite")]
    SingularMatrix,

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("eigenvalue {0:e} is not strictly positive")]
    NonPositiveEigenvalue(f64),

    #[error(
        "mean shift is infeasible: squared Mahalanobis norm {norm_sq} exceeds gamma1 = {gamma1}"
    )]
    InfeasibleMean { norm_sq: f64, gamma1: f64 },

    #[error("worst-case covariance is indefinite: smallest eigenvalue {min_eigenvalue:e} (requires gamma1 < gamma2)")]
    NotPsdResult { min_eigenvalue: f64 },

    #[error("input sequence is empty")]
    EmptyInput,

    #[error("iteration did not converge after {iterations} steps")]
    NoConvergence { iterations: usize },

    #[error("adversarial mechanism needs the target predictor's pdf before realizing the step")]
    MechanismOrderViolation,

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
}
