use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("composite channel length {length} exceeds cyclic prefix {cp_len}")]
    ChannelTooLong { length: usize, cp_len: usize },

    #[error("trajectory does not cover time {time} (span starts at {start}, length {len})")]
    TrajectorySpan { time: isize, start: isize, len: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("trellis has {states} states, exceeding the budget of {budget}")]
    TrellisBudget { states: usize, budget: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
