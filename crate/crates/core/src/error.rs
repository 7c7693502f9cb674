//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV cell failed to parse. Carries the 1-based data row and the column name.
    #[error("parse error in {path} at row {row}, column '{column}': {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    /// Input violated a structural requirement (duplicate ids, mismatched member sets, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument was outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A statistical estimate could not be formed (empty group, too few points, ...).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Propensity matching could not proceed.
    #[error("matching error: {0}")]
    Matching(String),

    /// A generator spec is internally inconsistent or infeasible.
    #[error("spec error: {0}")]
    Spec(String),

    /// A requested key (treatment, uplift entry) is not defined.
    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
