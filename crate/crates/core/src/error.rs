use thiserror::Error;

/// Errors raised by the model, planner, learner and simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition (stepping a finished
    /// episode, expanding a risk state, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("policy has no action at t={t}, levels={levels:?}")]
    IncompletePolicy { t: usize, levels: Vec<u32> },
}

pub type Result<T> = std::result::Result<T, Error>;
