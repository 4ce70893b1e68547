use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the codec runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A caller supplied arguments that violate an operation's preconditions.
    InvalidArgument(String),
    /// A stateful operation was invoked in a state that does not allow it.
    InvalidState(String),
    /// The container bytes are malformed.
    Format {
        offset: usize,
        message: String,
    },
    /// An entropy-coded payload could not be decoded.
    Decode {
        frame: Option<usize>,
        step: Option<usize>,
        message: String,
    },
    /// A weight tensor is missing, misshapen or violates a model invariant.
    WeightLoad {
        tensor: String,
        message: String,
    },
    Io(String),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Self::InvalidArgument(message.into())
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Self::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn decode(message: impl Into<String>) -> Self {
        Self::Decode {
            frame: None,
            step: None,
            message: message.into(),
        }
    }

    pub(crate) fn weight(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Self::WeightLoad {
            tensor: tensor.into(),
            message: message.into(),
        }
    }

    /// Attaches a coding-step index to a decode error; other variants pass through.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Self::Decode { frame, message, .. } => Self::Decode {
                frame,
                step: Some(step),
                message,
            },
            other => other,
        }
    }

    /// Attaches a frame index to a decode or format error.
    pub fn at_frame(self, index: usize) -> Self {
        match self {
            Self::Decode { step, message, .. } => Self::Decode {
                frame: Some(index),
                step,
                message,
            },
            Self::Format { offset, message } => Self::Decode {
                frame: Some(index),
                step: None,
                message: format!("malformed payload at byte {offset}: {message}"),
            },
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidArgument(message) => write!(f, "invalid argument: {message}"),
            Self::InvalidState(message) => write!(f, "invalid state: {message}"),
            Self::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Self::Decode { frame, step, message } => {
                write!(f, "decode error")?;
                if let Some(frame) = frame {
                    write!(f, " in frame {frame}")?;
                }
                if let Some(step) = step {
                    write!(f, " at coding step {step}")?;
                }
                write!(f, ": {message}")
            }
            Self::WeightLoad { tensor, message } => {
                write!(f, "weight tensor `{tensor}`: {message}")
            }
            Self::Io(message) => write!(f, "i/o error: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err.to_string())
    }
}
