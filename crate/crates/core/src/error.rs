use std::path::PathBuf;

use crate::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    VocabMismatch { id: TokenId, vocab_size: usize },

    #[error("enumeration needs {required} paths, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("context of {capacity} positions exhausted")]
    ContextOverflow { capacity: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by configuration rather than by running a decode.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::VocabMismatch { .. } | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
