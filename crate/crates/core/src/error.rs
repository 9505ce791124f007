use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("design matrix is numerically singular (XᵀX not positive definite)")]
    SingularDesign,

    #[error("degenerate fit: scale estimate is zero (perfect fit)")]
    DegenerateFit,

    #[error("point {0} lies outside the support of the density")]
    UnsupportedPoint(f64),

    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("numerical integration failed: {0}")]
    IntegrationFailure(String),

    #[error("dimension p = {p} too high for grid quadrature (max {max}); use the Metropolis sampler")]
    DimensionTooHigh { p: usize, max: usize },

    #[error("Markov chain diagnostics failed: post burn-in acceptance rate {0:.3}")]
    ChainDiagnosticsFailure(f64),

    #[error("rejection sampler exceeded its budget of {0} proposals")]
    RejectionBudgetExceeded(u64),

    #[error("score is not finite at residual {0}")]
    ScoreSingularity(f64),

    #[error("information matrix is singular or not positive definite")]
    SingularInformation,

    #[error("need at least {needed} draws for this level, have {have}")]
    InsufficientDraws { needed: usize, have: usize },

    #[error("invalid confrontation: {0}")]
    InvalidConfrontation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
