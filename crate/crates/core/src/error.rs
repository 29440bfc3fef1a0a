use std::path::PathBuf;

use crate::fingerprint::Fingerprint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image of {height}x{width} is not divisible by 2^{level}")]
    Dimension { height: usize, width: usize, level: u32 },

    #[error("invalid level {level}: {reason}")]
    Level { level: u32, reason: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("packet layout error: {0}")]
    Layout(String),

    #[error("fingerprint mismatch:\n  expected: {expected}\n  found:    {found}")]
    FingerprintMismatch {
        expected: Box<Fingerprint>,
        found: Box<Fingerprint>,
    },

    #[error("insufficient samples: need at least 2 images, found {found}")]
    InsufficientSamples { found: u64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("checksum error: {0}")]
    Checksum(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("numerical error{}: {message}", packet.map(|p| format!(" in packet {p}")).unwrap_or_default())]
    Numerical {
        packet: Option<usize>,
        message: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no images found under {}", .0.display())]
    EmptyDataset(PathBuf),

    #[error("failed to decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("{}: {message}", path.display())]
    DimensionPolicy { path: PathBuf, message: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("codec error: {0}")]
    Codec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            packet: None,
            message: message.into(),
        }
    }

    /// Attaches a packet index to numerical errors; other variants pass through.
    pub(crate) fn in_packet(self, index: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical {
                packet: Some(index),
                message,
            },
            other => other,
        }
    }
}
