use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: wrong shapes, invalid probability rows, bad parameters.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("total iterations {horizon} is not divisible by the synchronization period {tau}")]
    Divisibility { horizon: usize, tau: usize },

    #[error("initial Q-table entry {value} at ({state},{action}) is outside [0, {bound}]")]
    InitRange {
        state: usize,
        action: usize,
        value: f64,
        bound: f64,
    },

    #[error("{what} did not converge within {cap} iterations")]
    NonConvergence { what: &'static str, cap: usize },

    #[error("{0}")]
    Inapplicable(String),

    #[error("stationary initial states requested but no chain analysis was supplied")]
    MissingStationary,
}

impl Error {
    /// True for violations of a domain precondition (as opposed to malformed input).
    pub fn is_domain(&self) -> bool {
        !matches!(self, Error::Invalid(_) | Error::ShapeMismatch { .. })
    }
}
