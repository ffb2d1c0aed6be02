use thiserror::Error;

/// Errors raised by the geomot library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of the operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input is well-shaped but numerically degenerate (zero norm, zero length, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// Graph construction produced more than one connected component.
    #[error("graph is disconnected: {components} components")]
    Disconnected { components: usize },

    #[error("invalid marginal: {0}")]
    Marginal(String),

    /// Input failed a structural check (asymmetric, non-finite, out of range).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A label or group could not be resolved to a graph node.
    #[error("cannot map {0} to a graph node")]
    Mapping(String),

    #[error("cannot form three splits from {0} groups")]
    TooFewGroups(usize),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    /// Training diverged.
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
