use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point fell outside the domain an operation requires.
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    /// The 1-D dual equation of a hyperplane projection has no sign change
    /// inside the admissible multiplier interval.
    #[error("could not bracket the dual root (residual at zero multiplier {residual:e})")]
    Bracket { residual: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("line search step underflow in dual Newton solve")]
    StepUnderflow,

    #[error("zero operator: {0}")]
    ZeroOperator(String),

    #[error("control requires set distances but none were supplied")]
    MissingDistances,

    #[error("insufficient trace data: {0}")]
    InsufficientData(String),

    /// A projection inside the solver failed; `step` is the iteration index.
    #[error("projection failed at step {step}: {source}")]
    Projection { step: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
