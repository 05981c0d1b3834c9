use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Every CLI failure maps onto one of these
/// categories so the exit code and the `error: <category>: ...` line
/// stay stable for scripting.
#[derive(Debug, Error)]
pub enum SeerError {
    #[error("config: {0}")]
    Config(String),

    #[error("topology: {0}")]
    Topology(String),

    #[error("trace: {path}:{line}: {msg}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("trace: {0}")]
    MalformedTrace(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training: diverged at epoch {epoch}: {msg}")]
    TrainingDiverged { epoch: usize, msg: String },

    #[error("annotation: {0}")]
    Annotation(String),

    #[error("diagnosis: {0}")]
    Diagnosis(String),

    #[error("allocation: {0}")]
    Allocation(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SeerError {
    /// Stable process exit code per category (0 is success, 1 is reserved
    /// for panics/unexpected).
    pub fn exit_code(&self) -> i32 {
        match self {
            SeerError::Config(_) => 2,
            SeerError::Topology(_) => 3,
            SeerError::TraceParse { .. } | SeerError::MalformedTrace(_) => 4,
            SeerError::Model(_) => 5,
            SeerError::TrainingDiverged { .. } => 6,
            SeerError::Annotation(_) => 7,
            SeerError::Diagnosis(_) => 8,
            SeerError::Allocation(_) => 9,
            SeerError::Io { .. } => 10,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SeerError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SeerError>;
