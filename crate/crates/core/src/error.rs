use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("malformed manifest at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("item {id}: channel {channel} has dimension {found}, expected {expected}")]
    InconsistentDimensions { id: usize, channel: usize, expected: usize, found: usize },
    #[error("item {id}: expected {expected} feature channels, found {found}")]
    ChannelCount { id: usize, expected: usize, found: usize },
    #[error("duplicate item id {0}")]
    DuplicateId(usize),
    #[error("item ids must be contiguous from 0 (missing {0})")]
    NonContiguousIds(usize),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange { what: &'static str, index: usize, len: usize },
    #[error("subset has {available} items, need at least {required}")]
    SubsetTooSmall { available: usize, required: usize },
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("item {0} is not in the current display")]
    NotDisplayed(usize),
    #[error("session is not running (status {0})")]
    NotRunning(crate::session::Status),
    #[error("replay diverged at iteration {0}")]
    ReplayMismatch(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty record list")]
    NoRecords,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
