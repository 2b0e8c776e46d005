use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    /// A loss component became NaN or infinite; training state is left at the last finite step.
    #[error("training diverged at step {step}: {component} loss is not finite")]
    Divergence { component: String, step: u64 },
    #[error("checkpoint format version {found} is not readable by this build (reader version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("image codec error: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<vivat_autograd::Error> for Error {
    fn from(e: vivat_autograd::Error) -> Self {
        match e {
            vivat_autograd::Error::Shape(m) => Error::Shape(m),
            vivat_autograd::Error::Invalid(m) => Error::Validation(m),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
