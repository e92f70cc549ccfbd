use thiserror::Error;

/// Errors raised by the auction library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input violates a mathematical precondition (bad index, negative weight, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input exceeds an exhaustive-search guard.
    #[error("size error: {what} is {actual}, limit is {limit}")]
    Size {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    /// Operation not available for this kind of graph or valuation.
    #[error("mode error: {0}")]
    Mode(String),

    /// Algorithm parameters make a probability exceed one, or similar.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("LP solver error: {0}")]
    Solver(String),

    /// Allocate(1) did not empty its work set within the round cap.
    #[error("rounding failed: {remaining} users still unallocated after {rounds} rounds")]
    RoundingFailure { rounds: usize, remaining: usize },

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("optimization did not converge: gap {gap:e} after {iterations} iterations")]
    Optimization { gap: f64, iterations: usize },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
