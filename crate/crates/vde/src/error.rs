use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum VdeError {
    #[error("MAPE undefined at zero actual")]
    MapeZeroActual,
    #[error("WMAPE undefined when all actuals are zero")]
    WmapeZeroTotal,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("cannot split {frames} frames into {segments} segments of at least 2 frames")]
    TooManySegments { segments: usize, frames: usize },
    #[error("segment has {0} frames; motion needs at least 2")]
    SegmentTooShort(usize),
    #[error("reference score near zero ({0})")]
    ReferenceNearZero(f64),
    #[error("reference score {0} is negative")]
    NegativeReference(f64),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("background mask is empty")]
    EmptyMask,
    #[error("invalid frames: {0}")]
    InvalidFrames(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, VdeError>;
