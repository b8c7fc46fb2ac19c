use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {0:?} is not contained in any mesh cell")]
    PointOutsideMesh(Vec<f64>),

    #[error("no quadrature rule of degree {degree} in dimension {dim}")]
    UnsupportedDegree { dim: usize, degree: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("BiCGStab breakdown after {iterations} iterations ({reason})")]
    Breakdown {
        iterations: usize,
        reason: &'static str,
    },

    #[error("iterative solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("matrix is singular to working precision")]
    SingularMatrix,

    #[error("zero pivot in incomplete factorisation at row {0}")]
    ZeroPivot(usize),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("semismooth Newton did not converge in {maxit} iterations (last residual {last:e})")]
    NoConvergence {
        maxit: usize,
        last: f64,
        log: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
