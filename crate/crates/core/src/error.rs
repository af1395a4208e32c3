use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data (files, grid specifications).
    #[error("invalid input: {0}")]
    Input(String),

    /// The Q-function denominator vanished or changed sign.
    #[error("Q-function singularity at j={j}, theta={theta}, G={g}")]
    Singularity { j: usize, theta: f64, g: f64 },

    /// A ratio of vanishing quantities (no coincidences, zero mean, ...).
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    /// Covariance matrix that is not a physical Gaussian state.
    #[error("non-physical state: {0}")]
    State(String),

    /// Data outside the low-power regime required by an estimator.
    #[error("regime check failed: {0}")]
    Regime(String),

    /// The figure of merit is non-positive across the whole search bracket.
    #[error("no CHSH violation in bracket: {0}")]
    NoViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
