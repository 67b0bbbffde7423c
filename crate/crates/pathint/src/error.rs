use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must be symmetric positive definite was not
    /// (e.g. a step covariance with rank-deficient diffusion).
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    /// A sampling-policy matrix A_i was singular or near-singular.
    #[error("sampling covariance transform is singular at step {step}")]
    SingularTransform { step: usize },

    /// A trajectory's deterministic block does not follow the model:
    /// the stored a-block differs from the one-step prediction.
    #[error("inconsistent trajectory: a-block residual {residual:.3e} at step {step} exceeds {tol:.1e}")]
    InconsistentTrajectory {
        step: usize,
        residual: f64,
        tol: f64,
    },

    /// Backward pass could not regularize the local quadratic model.
    #[error("control Hessian not invertible at step {step} (regularization {reg:.3e} exhausted)")]
    HessianNotInvertible { step: usize, reg: f64 },

    /// A derivative, trajectory, or cost left the finite-number range.
    #[error("non-finite {0}")]
    NonFinite(&'static str),

    /// Config file parse problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
