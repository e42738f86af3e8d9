use std::path::PathBuf;

/// Errors produced by the hbev library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell ({row}, {col}) is outside a {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("rotation is gimbal-degenerate (pitch = {pitch} rad)")]
    Degenerate { pitch: f64 },
    #[error("time {time} is outside the trajectory domain [{start}, {end}]")]
    InterpolationDomain { time: f64, start: f64, end: f64 },
    #[error("metric is undefined: no jointly valid cells")]
    UndefinedMetric,
    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },
    #[error("{}: {cause}", path.display())]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
