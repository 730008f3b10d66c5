use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("non-finite loss while probing parameter {index}")]
    NonFiniteProbe { index: usize },

    #[error("training diverged in {stage} at epoch {epoch}: {message}")]
    Diverged {
        stage: Stage,
        epoch: usize,
        message: String,
    },

    #[error("no anchor candidate for class(es) {0:?}")]
    DegenerateClass(Vec<usize>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// The training stage an error is attributed to, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Diverged { stage, .. } => Some(*stage),
            Error::DegenerateClass(_) => Some(Stage::Estimation),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which part of the two-stage procedure an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Estimation,
    Classifier,
    Evaluation,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Data => "data",
            Stage::Estimation => "estimation",
            Stage::Classifier => "classifier",
            Stage::Evaluation => "evaluation",
        };
        f.write_str(s)
    }
}
