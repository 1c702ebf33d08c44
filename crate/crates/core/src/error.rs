use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate IMU interval: need at least 2 samples, got {0}")]
    DegenerateInterval(usize),

    #[error("IMU timestamps not strictly increasing at sample {index} (t = {timestamp})")]
    NonMonotonicTimestamps { index: usize, timestamp: f64 },

    #[error("unknown camera id {0}")]
    UnknownCamera(u32),

    #[error("frame at t = {frame_time} is older than the newest window node at t = {newest_time}")]
    OutOfOrderFrame { frame_time: f64, newest_time: f64 },

    #[error("IMU data does not cover [{from}, {to}]")]
    ImuGap { from: f64, to: f64 },

    #[error("no sample pairs within {max_dt} s could be associated")]
    AssociationFailed { max_dt: f64 },

    #[error("trajectory spans {span} s, shorter than the requested RPE step {step} s")]
    InsufficientSpan { span: f64, step: f64 },

    #[error("estimator is not initialized")]
    NotInitialized,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateInterval(_) => "degenerate_interval",
            Error::NonMonotonicTimestamps { .. } => "non_monotonic_timestamps",
            Error::UnknownCamera(_) => "unknown_camera",
            Error::OutOfOrderFrame { .. } => "out_of_order_frame",
            Error::ImuGap { .. } => "imu_gap",
            Error::AssociationFailed { .. } => "association_failed",
            Error::InsufficientSpan { .. } => "insufficient_span",
            Error::NotInitialized => "not_initialized",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }

    /// File the error refers to, if any.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Io { path, .. } | Error::Parse { path, .. } => Some(path),
            _ => None,
        }
    }
}
