use std::path::Path;

use bdpo_core::Error as CoreError;

/// Errors surfaced by the tool, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) => 1,
            LabError::Data(_) => 2,
            LabError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        LabError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        fn numerical(e: &CoreError) -> bool {
            match e {
                CoreError::NonFinite { .. } | CoreError::NonFiniteParameter(_) => true,
                CoreError::Pair { source, .. } => numerical(source),
                _ => false,
            }
        }
        if numerical(&e) {
            LabError::Numerical(e.to_string())
        } else {
            LabError::Data(e.to_string())
        }
    }
}
