use thiserror::Error;

/// Errors raised by the divboot library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("reference measure has a non-positive entry {value} at cell {index}")]
    NonPositiveReference { index: usize, value: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-representable index gamma = {0}: weight laws exist only for gamma <= 1 or gamma = 2")]
    UnsupportedGamma(f64),

    #[error("closed form out of domain: 1 + gamma(gamma-1) * divergence = {0} is not positive")]
    OutOfDomain(f64),

    #[error("no interior minimum bracketed on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("parameter {0:?} lies outside the model box")]
    OutsideBox(Vec<f64>),

    #[error("weights sum to zero; the normalized weighted measure is undefined")]
    DegenerateWeights,

    #[error("target is infeasible for gamma = {0}: the divergence objective is infinite")]
    InfeasibleTarget(f64),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("only {found} uncensored sample sizes; at least 2 are required")]
    InsufficientPoints { found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
