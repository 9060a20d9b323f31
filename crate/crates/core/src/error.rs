use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}:{column}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("video {video_id}: {rule}")]
    Validation { video_id: String, rule: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{}: truncated feature file (expected {expected} bytes, found {found})", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: header mismatch: {detail}", path.display())]
    HeaderMismatch { path: PathBuf, detail: String },

    #[error("{}: non-finite value at flat index {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,

    #[error("mAP is undefined: no ground-truth instances of any scored class")]
    UndefinedMetric,

    #[error("fold {fold_id}: {source}")]
    Fold {
        fold_id: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(video_id: &str, rule: impl Into<String>) -> Self {
        Error::Validation {
            video_id: video_id.to_string(),
            rule: rule.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, err: serde_json::Error) -> Self {
        if err.is_io() {
            return Error::io(path, std::io::Error::other(err.to_string()));
        }
        Error::Parse {
            file: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub fn in_fold(self, fold_id: usize) -> Self {
        Error::Fold {
            fold_id,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 validation, 2 I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Truncated { .. } | Error::HeaderMismatch { .. } => 2,
            Error::NonFinite { .. } | Error::Numerical(_) | Error::StaleCache => 3,
            Error::Fold { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
