//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SparError>;

#[derive(Debug, Error)]
pub enum SparError {
    /// A value or parameter lies outside its mathematical domain.
    #[error("parameter domain error: {0}")]
    ParamDomain(String),

    /// Data that must be strictly positive contained a non-positive entry.
    #[error("non-positive data in column {column} (row {row}): {value}")]
    NonPositiveData { row: usize, column: usize, value: f64 },

    /// A margin has zero variance and cannot be standardised.
    #[error("degenerate margin {column}: zero variance")]
    DegenerateMargin { column: usize },

    /// A row coincides with the star-centre and has no angle.
    #[error("degenerate point at row {row}: zero radius")]
    DegeneratePoint { row: usize },

    /// Vector or matrix dimensions do not chain.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Model dimension does not match the supplied data.
    #[error("dimension mismatch: model has d={expected}, data has d={got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Too few observations for the requested operation.
    #[error("insufficient data for {context}: need {needed}, got {got}")]
    InsufficientData { context: &'static str, needed: usize, got: usize },

    /// Training loss was non-finite before the first update.
    #[error("loss non-finite at initialization")]
    InitLossNotFinite,

    /// Fitted threshold missed the target exceedance fraction.
    #[error("threshold miscalibrated: exceedance fraction {fraction:.4} vs alpha {alpha:.4}")]
    Calibration { fraction: f64, alpha: f64 },

    /// Model invariant violated (corrupted or hand-built model).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A body sample was requested from a model with no stored body points.
    #[error("model stores no body points")]
    EmptyBody,

    /// Rejection sampling found essentially no mass in the target region.
    #[error("infeasible region: acceptance rate below {min_rate:e} after {trials} tail draws")]
    InfeasibleRegion { min_rate: f64, trials: usize },

    /// The requested return period cannot be resolved at this sample size.
    #[error("return period unresolvable at m_tail={m_tail}; need m_tail >= {required_m_tail}")]
    Resolution { m_tail: usize, required_m_tail: usize },

    /// Input file violated the documented schema.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Correlation matrix is not symmetric positive-definite.
    #[error("correlation matrix is not positive-definite")]
    NotPositiveDefinite,

    /// Too many bootstrap replicates failed to fit.
    #[error("bootstrap aggregate failure: {failed} of {total} replicates failed")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
