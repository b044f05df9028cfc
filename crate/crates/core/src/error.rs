use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("pixel ({0:.3}, {1:.3}) is outside the image")]
    OutOfFrame(f64, f64),
    #[error("missing depth measurement")]
    InvalidDepth,
    #[error("homogeneous coordinate vanishes at ({0}, {1})")]
    DegeneratePoint(f64, f64),
    #[error("degenerate calibration: {0}")]
    DegenerateConfiguration(String),
    #[error("pose is not finite")]
    PoseNotFinite,
    #[error("surfel map is empty")]
    EmptyMap,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("gaze sample is flagged invalid")]
    InvalidSample,
    #[error("timestamps are not monotonic at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("accuracy {accuracy} must lie in (1/{classes}, 1]")]
    InvalidAccuracy { accuracy: f64, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("failed to write {}: {source}", path.display())]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tracking lost on {lost} of {total} frames")]
    TrackingLost { lost: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::WriteFailure {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    ///
    /// | code | meaning                          |
    /// |------|----------------------------------|
    /// | 2    | configuration error              |
    /// | 3    | I/O, manifest or input data      |
    /// | 4    | tracking lost beyond threshold   |
    /// | 5    | degenerate calibration           |
    /// | 1    | any other failure                |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingFile(_)
            | Error::MalformedManifest(_)
            | Error::NonMonotonicTimestamps(_)
            | Error::Parse { .. }
            | Error::WriteFailure { .. }
            | Error::Io(_)
            | Error::Image(_) => 3,
            Error::TrackingLost { .. } => 4,
            Error::DegenerateConfiguration(_) => 5,
            _ => 1,
        }
    }
}
