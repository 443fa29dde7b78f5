use thiserror::Error;

/// Errors surfaced by the moment, Gaussian and quantifier layers.
///
/// Finite-sample noise routinely violates exact Gaussian constraints; the
/// model-level variants carry the offending raw value so callers can see
/// how badly, instead of getting a silently clamped number.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty data: zero total shots")]
    EmptyData,

    #[error("window group N must be positive")]
    InvalidN,

    #[error("detector efficiency {0} outside (0, 1]")]
    BadEfficiency(f64),

    #[error("mode count {0} must be >= 1")]
    BadModeCount(f64),

    #[error("degenerate intensity variance {0} (must be positive)")]
    DegenerateVariance(f64),

    #[error("covariance discriminant negative: {0}")]
    NegativeDiscriminant(f64),

    #[error("unphysical parameter set: {0}")]
    Unphysical(String),

    #[error("rejection sampling exhausted after {0} attempts")]
    SamplingExhausted(u32),

    #[error("non-positive determinant of {which}: {value}")]
    NonPositiveDeterminant { which: &'static str, value: f64 },

    #[error("square-root argument negative beyond tolerance: {0}")]
    DomainError(f64),

    #[error("negative |C|^2 = {0}: moments inconsistent with the single-mode Gaussian model")]
    NegativeCSquared(f64),

    #[error("zero mean intensity")]
    ZeroMean,

    #[error("inverted bracket: lower {lower} > upper {upper}")]
    InvertedBracket { lower: f64, upper: f64 },

    #[error("contour level {0} not bracketed by the grid")]
    InsufficientGrid(f64),

    #[error("did not converge after {iterations} iterations (last change {change:.3e})")]
    NotConverged { iterations: usize, change: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
