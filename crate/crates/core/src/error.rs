use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input failed a structural or physical validity check.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Operating point at or beyond the parametric-oscillation threshold.
    #[error("unstable operating point: {0}")]
    Instability(String),

    /// A square root or logarithm argument left its domain beyond tolerance.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// A physical parameter is outside the range where the model applies.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// Inconsistent instrument or filter configuration.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    /// Least-squares fit stopped without meeting its convergence test.
    #[error("fit did not converge after {iterations} iterations ({reason}); last iterate {last:?}")]
    FitNotConverged {
        iterations: usize,
        reason: String,
        last: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
