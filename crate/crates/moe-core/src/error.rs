use thiserror::Error;

/// Errors surfaced by model construction, estimation, loss evaluation, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("dimension mismatch for `{what}`: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("model family mismatch: expected {expected}, got {got}")]
    FamilyMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("truth atoms {left} and {right} are duplicates; Voronoi cells are undefined")]
    DuplicateTruthAtoms { left: usize, right: usize },

    #[error("fit failed: {reason}")]
    FitFailure { reason: String },

    #[error("slope estimation failed: {reason}")]
    SlopeEstimation { reason: String },

    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
