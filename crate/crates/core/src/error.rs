use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MIDI parse error at byte {offset}: {msg}")]
    Midi { offset: usize, msg: String },

    #[error("song is not in 4/4 time")]
    NotFourFour,

    #[error("{format} container: {msg}")]
    Format { format: &'static str, msg: String },

    #[error("audio: {0}")]
    Audio(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] ndiff::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn midi(offset: usize, msg: impl Into<String>) -> Self {
        Error::Midi {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            format,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
