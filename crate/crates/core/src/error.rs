//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by configuration validation, scheduling, aggregation and
/// analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("variance or power must be strictly positive: {name} = {value}")]
    NonPositiveVariance { name: &'static str, value: f64 },

    #[error("zeta must lie strictly inside (0, 1), got {0}")]
    ZetaOutOfRange(f64),

    #[error("{name} has length {got}, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("system must contain at least one device")]
    EmptySystem,

    #[error("{name} must be nonnegative, got {value}")]
    NegativeInput { name: &'static str, value: f64 },

    #[error("total noise variance is zero; DP epsilon is undefined")]
    ZeroNoise,

    #[error("schedule has no uploaders")]
    NoUploaders,

    #[error("Xi is defined for nonnegative arguments, got {0}")]
    NegativeArgument(f64),

    #[error("invalid range: hi = {hi} < lo = {lo}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("operation requires an uploader/jammer schedule but an Offline role is present")]
    OfflineRolePresent,

    #[error("exhaustive search supports at most {cap} devices, got {n}")]
    TooLarge { n: usize, cap: usize },

    #[error("no device satisfies the selection threshold")]
    EmptySelection,

    #[error("no device satisfies the per-uploader privacy constraint")]
    NoFeasibleUploader,

    #[error("gradient norm {norm} exceeds the bound {bound}")]
    GradientTooLarge { norm: f64, bound: f64 },

    #[error("dimension mismatch: {name} has length {got}, expected {expected}")]
    DimensionMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("batch must contain at least one sample")]
    EmptyBatch,

    #[error("normal equations are singular or near-singular")]
    SingularSystem,

    #[error("trace carries no optimum; bound validation needs a run with known m*")]
    MissingOptimum,

    #[error("config error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
