use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("variance evaluation produced a non-finite value at mu = {mu}")]
    NonFiniteVariance { mu: f64 },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(
        "solver did not converge after {iterations} iterations (residual {residual:.3e}, best theta {best:?})"
    )]
    NonConvergence {
        best: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("support grid would exceed {limit} points")]
    GridExplosion { limit: usize },

    #[error("mixture likelihood underflow for pair '{id}'")]
    Underflow { id: String },

    #[error("log-likelihood decreased from {previous} to {current} at iteration {iteration}")]
    LikelihoodDecrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("unsupported variance form for this operation: {0}")]
    UnsupportedForm(String),

    #[error("confidence set is empty: {0}")]
    EmptySet(String),

    #[error("study failed: {failures} of {reps} replicates could not be fitted")]
    Study { failures: usize, reps: usize },

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error originates in the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data { .. } | Error::DegenerateData(_) | Error::Io(_) | Error::InvalidArgument(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
