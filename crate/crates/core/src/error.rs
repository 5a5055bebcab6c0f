use std::path::PathBuf;

use crate::graph::TreeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("non-finite value at linear index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("{what}: expected {expected} channels, found {found}")]
    ChannelCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("AGT1 format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("graph is not a tree: {0}")]
    NotATree(#[from] TreeError),

    #[error("schedule violation: {0}")]
    ScheduleViolation(String),

    #[error("enumeration needs {required} configurations, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
