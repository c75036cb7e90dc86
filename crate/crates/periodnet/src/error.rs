//! Crate-wide error type.
//!
//! Errors are grouped by how the command line maps them to exit codes:
//! usage problems (2), data/format problems (3), numeric failures (4).

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, signal utilities, file formats, and training.
#[derive(Debug)]
pub enum Error {
    /// Operands have incompatible shapes.
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },
    /// An argument is outside its documented domain.
    InvalidArgument {
        context: &'static str,
        detail: String,
    },
    /// NaN or infinity where finite values are required.
    NonFinite { context: &'static str },
    /// A second backward sweep was requested without re-recording the graph.
    GraphConsumed,
    /// Backward was seeded from a tensor that is not a scalar.
    NonScalarLoss { numel: usize },
    /// F0 interpolation needs at least one voiced frame.
    AllUnvoiced,
    /// A raw or scaled F0 reaches the Nyquist limit.
    Nyquist { f0_hz: f64, sample_rate: f64 },
    /// On-disk format violation: bad magic, version, truncation, or checksum.
    Format {
        path: Option<PathBuf>,
        detail: String,
    },
    /// Underlying I/O failure.
    Io {
        path: Option<PathBuf>,
        source: io::Error,
    },
    /// Training or synthesis aborted on a numeric failure.
    Numeric { detail: String },
    /// Invalid command line or config file usage.
    Usage { detail: String },
    /// Input data inconsistent with the requested operation.
    Data { detail: String },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: Some(path.as_ref().to_path_buf()),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: Some(path.as_ref().to_path_buf()),
            detail: detail.into(),
        }
    }

    pub fn data(detail: impl Into<String>) -> Self {
        Error::Data {
            detail: detail.into(),
        }
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        Error::Usage {
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 0 ok, 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage { .. } => 2,
            Error::NonFinite { .. } | Error::Numeric { .. } => 4,
            _ => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, detail } => {
                write!(f, "shape mismatch in {context}: {detail}")
            }
            Error::InvalidArgument { context, detail } => {
                write!(f, "invalid argument in {context}: {detail}")
            }
            Error::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
            Error::GraphConsumed => {
                write!(f, "graph already consumed by backward; re-record before reuse")
            }
            Error::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Error::AllUnvoiced => write!(f, "F0 contour has no voiced frames"),
            Error::Nyquist { f0_hz, sample_rate } => write!(
                f,
                "F0 {f0_hz} Hz reaches Nyquist for sample rate {sample_rate} Hz"
            ),
            Error::Format { path, detail } => match path {
                Some(p) => write!(f, "format error in {}: {detail}", p.display()),
                None => write!(f, "format error: {detail}"),
            },
            Error::Io { path, source } => match path {
                Some(p) => write!(f, "I/O error on {}: {source}", p.display()),
                None => write!(f, "I/O error: {source}"),
            },
            Error::Numeric { detail } => write!(f, "numeric failure: {detail}"),
            Error::Usage { detail } => write!(f, "usage error: {detail}"),
            Error::Data { detail } => write!(f, "data error: {detail}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
