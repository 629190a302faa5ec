//! Error type shared across the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors fed to an op do not have compatible shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single tensor has the wrong shape or rank for an op.
    #[error("bad shape in {op}: got {shape:?}, expected {expected}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        expected: String,
    },

    /// Invalid argument or configuration value.
    #[error("{0}")]
    Invalid(String),

    /// Tape misuse: backward ran twice, or started from a non-scalar.
    #[error("{0}")]
    Tape(String),

    /// A token id fell outside the vocabulary.
    #[error("token id {id} out of range for vocab of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    /// Training diverged or produced a non-finite loss.
    #[error("{0}")]
    Training(String),

    #[error("{path}:{line}: {msg}")]
    DatasetParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
