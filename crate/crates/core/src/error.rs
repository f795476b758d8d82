use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("illegal action {action} for agent {agent}")]
    IllegalAction { agent: usize, action: usize },
    #[error("step called on a terminal state")]
    SteppedTerminal,
    #[error("expected {expected} entries, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("invalid indices: {0}")]
    InvalidIndices(String),
    #[error("problem too large for exact solution: {0}")]
    TooLarge(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("no legal action for agent {0}")]
    NoLegalAction(usize),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("training diverged at update {update}: loss {loss}")]
    DivergedTraining { update: usize, loss: f64 },
    #[error("evaluation needs at least one episode")]
    EmptyEvaluation,
    #[error("bad attack targets: {0}")]
    BadTargets(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
