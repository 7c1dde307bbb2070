use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero vector where a direction is required")]
    ZeroVector,

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("task index {task} out of range (m = {m})")]
    TaskOutOfRange { task: usize, m: usize },

    #[error("sample budget overflow for dim={dim}, eps={eps}")]
    BudgetOverflow { dim: usize, eps: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("learner failed on task {task}: {source}")]
    Learner {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
