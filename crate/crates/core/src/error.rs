use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at episode {episode}: non-finite loss")]
    Diverged { episode: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
