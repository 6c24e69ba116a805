use alloc::string::String;

/// Errors produced by the collocation solver.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not numerically positive definite (pivot {pivot}, nugget {eta:e})")]
    Conditioning { pivot: usize, eta: f64 },

    #[error("singular Gauss-Newton normal equations (pivot {pivot})")]
    SingularNormalEquations { pivot: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
