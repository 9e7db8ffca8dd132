use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),
    #[error("signal too short: need at least {min} samples, got {actual}")]
    SignalTooShort { min: usize, actual: usize },
    #[error("sample rate mismatch: expected {expected} Hz, got {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("invalid target length {0}")]
    InvalidTargetLength(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },
    #[error("{0} has zero energy")]
    ZeroEnergy(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("segment start {start_s} s lies beyond clip end {duration_s} s")]
    SegmentOutOfRange { start_s: f64, duration_s: f64 },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("malformed grid file: {0}")]
    Grid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
