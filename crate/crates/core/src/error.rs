use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("symbol {0:?} is not in the alphabet")]
    Vocabulary(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("size guard violated: {0}")]
    Size(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingFailure { epoch: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
