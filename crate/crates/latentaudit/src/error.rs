use std::io;
use std::path::{Path, PathBuf};

/// Failures surfaced by the pipeline, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage:?} needs the output of {required:?}: {detail}")]
    Dependency { stage: String, required: String, detail: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

impl AuditError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Dependency { .. } => 1,
            Self::Io { .. } => 2,
            Self::Numerical(_) => 3,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Self::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    /// A malformed file: reported as an I/O failure carrying the path.
    pub fn corrupt(path: impl AsRef<Path>, msg: impl std::fmt::Display) -> Self {
        Self::io(path, io::Error::new(io::ErrorKind::InvalidData, msg.to_string()))
    }
}

impl From<latentaudit_core::Error> for AuditError {
    fn from(e: latentaudit_core::Error) -> Self {
        if e.is_numerical() {
            Self::Numerical(e.to_string())
        } else {
            Self::Validation(e.to_string())
        }
    }
}

/// Attaches a path to I/O results.
pub trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| AuditError::io(path, e))
    }
}
