use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("invalid integration interval")]
    InvalidInterval,
    #[error("integrand produced a non-finite value")]
    NonFinite,
    #[error(
        "quadrature did not converge after {panels} panels (error/tolerance = {error_ratio:.3e})"
    )]
    NotConverged { panels: usize, error_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StableError {
    #[error("stability index {0} outside (1, 2)")]
    AlphaOutOfRange(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("density underflows the floor at x = {x} (log density {log_density:.1})")]
    TailUnderflow { x: f64, log_density: f64 },
    #[error("density quadrature failed at x = {x}: {source}")]
    Quadrature { x: f64, source: QuadError },
    #[error("expectation quadrature failed: {0}")]
    Expectation(QuadError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CirError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("path overflow at fine step {step}: state {value}")]
    Overflow { step: usize, value: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate path: {0}")]
    DegeneratePath(String),
    #[error("{skipped} of {total} power-variation terms have a zero denominator")]
    ZeroDenominators { skipped: usize, total: usize },
    #[error("{clamped} of {total} rescaled increments hit the left-tail floor")]
    TooManyClamps { clamped: usize, total: usize },
    #[error("drift Newton solver did not converge in {iters} iterations (|G| = {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("singular hessian (condition number {cond:.3e})")]
    SingularHessian { cond: f64 },
    #[error("information matrix is not positive definite (smallest eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error(transparent)]
    Stable(#[from] StableError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<EstimError>,
    },
}

impl EstimError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        EstimError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
