use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{what} is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },
    #[error("{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, allowed {threshold:e})")]
    NotPsd {
        what: &'static str,
        min_eigenvalue: f64,
        threshold: f64,
    },
    #[error("{what} contains non-finite entries")]
    NonFinite { what: &'static str },
    #[error("matrix argument has spectrum with real part {min_real:e} below zero")]
    NegativeSpectrum { min_real: f64 },
    #[error("even matrix function did not reach tolerance: {reason}")]
    SeriesDivergence { reason: String },
    #[error("covariance is singular (condition number {condition:e})")]
    SingularCovariance { condition: f64 },
    #[error("composition lost positive semidefiniteness: {reason}")]
    NonGaussianComposition { reason: String },
    #[error("integration step failed: {reason}")]
    StepFailure { reason: String },
    #[error("{what} lost positive semidefiniteness at t = {t} (min eigenvalue {min_eigenvalue:e})")]
    PsdLost {
        what: &'static str,
        t: f64,
        min_eigenvalue: f64,
    },
    #[error("closed form requires C = 0")]
    CNotZero,
    #[error("closed form requires D = 0")]
    DNotZero,
    #[error("finite-difference sequence is not contracting for {what}")]
    NoisyFlow { what: &'static str },
    #[error("path measure requires alpha = 0, got {alpha}")]
    AlphaNonzero { alpha: f64 },
    #[error("transition kernel over step {dt} has a degenerate covariance")]
    DegenerateStep { dt: f64 },
    #[error("no sample satisfies the constraints")]
    EmptyAcceptance,
    #[error("exact bridge requires C = 0")]
    BridgeUnavailable,
    #[error("acceptance rate {rate:e} is below 1e-4")]
    LowAcceptance { rate: f64 },
    #[error("path log-weight {log_weight} exceeds 700")]
    WeightOverflow { log_weight: f64 },
    #[error("initial measure violates exp(|x|^r) moment condition: {reason}")]
    MomentConditionViolated { reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
