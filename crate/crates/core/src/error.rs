use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The model or an input structure is malformed.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exact computation would exceed its configured size cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("no convergence after {iterations} iterations: {detail}")]
    Convergence { iterations: usize, detail: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// A series that was required to converge diverges.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("periodic behaviour detected: {0}")]
    Periodicity(String),

    #[error("range error: {0}")]
    Range(String),

    /// Too few samples for a statistical estimate.
    #[error("insufficient statistics: {0}")]
    Statistics(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
