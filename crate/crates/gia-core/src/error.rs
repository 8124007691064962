//! Crate-wide error type.

use crate::tensor::Shape;
use std::fmt;

/// Errors produced by tensor ops, the raw pipeline, model builders and the trainer.
#[derive(Debug)]
pub enum Error {
    /// Elementwise or structural op received tensors of incompatible shape.
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    /// Channel count does not match what the layer expects.
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// `backward` was called on a non-scalar value.
    NotScalar { shape: Shape },
    /// Invalid argument or configuration; `what` names the offending parameter.
    Invalid { op: &'static str, what: String },
    /// Container or checkpoint file does not start with the expected magic bytes.
    BadMagic { path: String },
    /// Container or checkpoint file ended before its declared payload.
    Truncated { path: String },
    /// Container or checkpoint file has a version this build does not read.
    UnsupportedVersion { path: String, version: u8 },
    /// Header fields of a container are mutually inconsistent.
    Inconsistent { path: String, what: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Training loss became non-finite.
    Diverged { step: u64, value: f32 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch, {lhs} vs {rhs}")
            }
            Error::ChannelMismatch { op, expected, got } => {
                write!(f, "{op}: expected {expected} channels, got {got}")
            }
            Error::NotScalar { shape } => {
                write!(f, "backward: loss must have shape (1,1,1,1), got {shape}")
            }
            Error::Invalid { op, what } => write!(f, "{op}: {what}"),
            Error::BadMagic { path } => write!(f, "{path}: not a recognized container (bad magic)"),
            Error::Truncated { path } => write!(f, "{path}: file truncated"),
            Error::UnsupportedVersion { path, version } => {
                write!(f, "{path}: unsupported format version {version}")
            }
            Error::Inconsistent { path, what } => write!(f, "{path}: inconsistent header: {what}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Diverged { step, value } => {
                write!(f, "training diverged at step {step}: loss = {value}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
