use std::path::PathBuf;

use lvcore::denoiser::DenoiserError;
use lvcore::kv::KvError;
use lvcore::schedule::ScheduleError;
use lvcore::TensorError;
use lvde::VdeError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Vde(#[from] VdeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl PipelineError {
    pub fn file(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Self::File {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Schedule(_) => EXIT_CONFIG,
            Self::Numeric(_) | Self::Tensor(_) => EXIT_NUMERIC,
            Self::File { .. } | Self::Io(_) | Self::Csv(_) => EXIT_IO,
            Self::Denoiser(e) => match e {
                DenoiserError::Config(_) | DenoiserError::ContextMismatch { .. } => EXIT_CONFIG,
                DenoiserError::Checkpoint(_) | DenoiserError::Io(_) => EXIT_IO,
                DenoiserError::Kv(KvError::Config(_)) | DenoiserError::Schedule(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            },
            Self::Kv(KvError::Config(_)) => EXIT_CONFIG,
            Self::Kv(KvError::Snapshot(_) | KvError::Io(_)) => EXIT_IO,
            Self::Kv(_) => EXIT_NUMERIC,
            Self::Vde(e) => match e {
                VdeError::Config(_) | VdeError::TooManySegments { .. } => EXIT_CONFIG,
                VdeError::File { .. } | VdeError::Io(_) | VdeError::Format(_) | VdeError::Csv(_) | VdeError::Json(_) => {
                    EXIT_IO
                }
                _ => EXIT_NUMERIC,
            },
        }
    }
}
