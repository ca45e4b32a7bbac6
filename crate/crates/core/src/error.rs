use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("strictness constant kappa={0} outside [0, 1)")]
    KappaOutOfRange(f64),

    #[error("{0}")]
    UnsupportedOperator(String),

    #[error("step-size condition kappa < lambda_n < 1 violated at n={index}: lambda={lambda}, kappa={kappa}")]
    StepSizeViolation { index: u64, lambda: f64, kappa: f64 },

    #[error("schedule kappa {schedule} does not match operator kappa {operator}")]
    KappaMismatch { schedule: f64, operator: f64 },

    #[error("unknown schedule formula {0:?}")]
    UnknownFormula(String),

    #[error("divergence not witnessed within cap: partial sums stayed below {target} after {cap} terms")]
    DivergenceNotWitnessed { target: u64, cap: u64 },

    #[error("rate of divergence overflowed at n={0}")]
    RateOverflow(u64),

    #[error("point lies outside the operator domain")]
    OutsideDomain,

    #[error("no approximate fixed point within distance {b} and residual below {delta} found in {budget} steps")]
    NoApproxFixedPoint { b: f64, delta: f64, budget: u64 },

    #[error("point is not a fixed point: residual {0}")]
    NotAFixedPoint(f64),

    #[error("index {index} beyond trace horizon {horizon}")]
    BeyondHorizon { index: u64, horizon: u64 },

    #[error("trace was recorded without points")]
    PointsNotRecorded,

    #[error("growth-bound radius b={b} is below max(residual, distance)={required}")]
    RadiusTooSmall { b: f64, required: f64 },

    #[error("iteration horizon {0} exceeds the supported maximum")]
    HorizonTooLarge(u64),
}
