use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),

    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("invalid cut point (k={k}, l={l}); valid cut points: {valid}")]
    InvalidCut { k: usize, l: usize, valid: String },

    #[error("non-finite value at step {step}: {diagnostics}")]
    NonFinite { step: u64, diagnostics: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("unsupported checkpoint version {found:?}, expected {expected:?}")]
    CheckpointVersion { found: String, expected: String },

    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    CheckpointTruncated { offset: usize, needed: usize, len: usize },

    #[error("checkpoint tensor {path} has shape {found:?}, expected {expected:?}")]
    CheckpointShape { path: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("joint {joint} is behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },

    #[error("dataset cache error: {0}")]
    Dataset(String),

    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidArgument { op, detail: detail.into() }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
