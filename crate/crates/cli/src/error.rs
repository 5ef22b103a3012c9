use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: demf::Error },
    #[error(transparent)]
    Model(#[from] demf::Error),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 1 for problems with the request or its inputs, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        let model = match self {
            CliError::Model(e) | CliError::File { source: e, .. } => e,
            _ => return 1,
        };
        use demf::Error::*;
        match model {
            Quadrature { .. } | NotPositiveDefinite { .. } | Ar2Precondition(_) | Eigen(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}
