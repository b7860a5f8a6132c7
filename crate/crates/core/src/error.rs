use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("subject {index} has unobserved covariates but receives nonzero weight")]
    UnobservedCovariate { index: usize },

    #[error("all risk-set weights are zero")]
    ZeroWeights,

    #[error("invalid weight at subject {index}: {value}")]
    InvalidWeight { index: usize, value: f64 },

    #[error("empty risk set at t = {t}")]
    EmptyRiskSet { t: f64 },

    #[error("no events in cohort")]
    NoEvents,

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("subject {index} is missing `{field}` required by the weight plan")]
    MissingField { index: usize, field: &'static str },

    #[error("selection probability of subject {index} must lie in (0, 1], got {value}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("stratum {stratum} has no eligible subjects")]
    EmptyStratum { stratum: u32 },

    #[error("stratum {stratum} has no sampled subjects")]
    UnsampledStratum { stratum: u32 },

    #[error("unknown stratum {stratum}")]
    UnknownStratum { stratum: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no sign change of the estimating function within [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("iteration cap of {0} reached")]
    IterationCap(usize),

    #[error("singular slope matrix")]
    SingularSlope,

    #[error("nonfinite value encountered: {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
