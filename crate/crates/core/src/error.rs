use thiserror::Error;

/// Errors raised by the estimators and their supporting machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown model family `{0}`")]
    UnknownModel(String),

    #[error("model `{model}`: {reason}")]
    DimensionMismatch { model: String, reason: String },

    #[error("diffusion coefficient is not positive (sigma = {sigma}) at t = {t}")]
    NonPositiveSigma { sigma: f64, t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{excluded} of {total} paths blew up (budget is 1%)")]
    BlowUpBudget { excluded: usize, total: usize },

    #[error("singular one-step Jacobian")]
    SingularJacobian,

    #[error("empty point set")]
    EmptyPointSet,

    #[error("requested {k} neighbours but only {available} points are available")]
    TooManyNeighbors { k: usize, available: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
