use thiserror::Error;

use crate::domain::{QuestionId, UserId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid answer: {0}")]
    InvalidAnswer(String),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("empty sample")]
    EmptySample,
    #[error("no eligible users for outcome: {0}")]
    NoEligibleUsers(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("not a permutation: {0}")]
    NotAPermutation(String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
