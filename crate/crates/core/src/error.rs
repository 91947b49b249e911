use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("data distribution needs at least one atom")]
    EmptyAtoms,

    #[error("atom weight must be strictly positive and finite, got {0}")]
    BadWeight(f64),

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("integrator step {dt} must not exceed the learning rate {eta}")]
    StepTooCoarse { dt: f64, eta: f64 },

    #[error("learning rate must be positive, got {0}")]
    NonPositiveLearningRate(f64),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric: max |A - A^T| entry = {0}")]
    NotSymmetric(f64),

    #[error("matrix has a materially negative eigenvalue {0}; covariance is broken")]
    NotPositiveSemidefinite(f64),

    #[error("measures have different support sizes {0} and {1}; use the subsampling protocol")]
    UnequalSupport(usize, usize),

    #[error("support size {got} exceeds the exact-matching limit {limit}")]
    SupportTooLarge { got: usize, limit: usize },

    #[error("{what} = {value} is not an integer number of steps")]
    NonIntegerSteps { what: &'static str, value: f64 },

    #[error("moment order must be nonnegative, got {0}")]
    NegativeMoment(f64),

    #[error("ensemble must contain at least one point")]
    EmptyEnsemble,

    #[error("increment step {inc} does not match the integrator step {dt}")]
    IncrementMismatch { inc: f64, dt: f64 },

    #[error("need at least {need} usable points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("every curve point is noise-dominated; refusing to fit an order")]
    NoiseDominated,

    #[error("replicate count must be positive")]
    ZeroReplicates,

    #[error("checkpoint {0} is beyond the end of the run")]
    CheckpointOutOfRange(usize),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
