use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PkError {
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("numerical evaluation failed: {0}")]
    Evaluation(String),
    #[error("sampler failed: {0}")]
    Sampling(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not supported: {0}")]
    Capability(String),
    #[error("internal invariant broken: {0}")]
    Internal(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl PkError {
    /// Process exit status: 1 for configuration, 2 for IO and input data,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PkError::Config(_) | PkError::Precondition(_) => 1,
            PkError::Io { .. } | PkError::Parse { .. } => 2,
            PkError::Domain(_)
            | PkError::Evaluation(_)
            | PkError::Sampling(_)
            | PkError::Capability(_)
            | PkError::Internal(_) => 3,
        }
    }
}

pub type Result<T, E = PkError> = std::result::Result<T, E>;
