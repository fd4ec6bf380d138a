use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("non-finite loss at epoch {epoch}, subject {subject}")]
    NonFiniteLoss { epoch: usize, subject: String },

    #[error("non-finite t-SNE objective at iteration {0}")]
    NonFiniteObjective(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
