//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by field reconstruction, kriging, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    /// Two containers that must share a shape do not.
    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimsMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// An unfolding mode outside {0, 1, 2}.
    #[error("invalid unfolding mode {0} (must be 0, 1, or 2)")]
    InvalidMode(usize),

    /// A parameter outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An operation that needs observed cells received an empty mask,
    /// or one that needs unobserved cells received a full mask.
    #[error("mask unusable: {0}")]
    MaskUnusable(String),

    /// RSE denominator vanished (unobserved ground truth identically zero).
    #[error("relative error undefined: unobserved ground truth has zero norm")]
    ZeroDenominator,

    /// A matrix to be factorized or decomposed contained non-finite entries.
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    /// The ADMM iterate left the finite range.
    #[error("solver diverged at iteration {iteration} (lane {lane}): non-finite iterate")]
    Divergence { iteration: usize, lane: usize },

    /// Variogram estimation found no usable point pairs.
    #[error("no valid sample pairs for variogram estimation")]
    NoPairs,

    /// Variogram fit could not proceed (too few populated lag bins).
    #[error("variogram fit infeasible: {0}")]
    FitInfeasible(String),

    /// A data file failed validation.
    #[error("data error in {path}: {reason}")]
    Data { path: String, reason: String },

    /// Configuration rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    /// Every cell of a hyperparameter grid diverged.
    #[error("grid search failed: all {0} cells diverged")]
    AllDiverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 config, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Data { .. } | Error::Io(_) | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::AllDiverged(_) => 3,
            _ => 1,
        }
    }
}
