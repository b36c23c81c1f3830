use std::path::PathBuf;

use thiserror::Error;

use crate::params::Violation;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameters: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("enumeration too large: {0}")]
    TooLarge(String),

    #[error("non-finite gradient in tensor `{tensor}` at index {index}")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("non-finite loss in layer {layer}")]
    NonFiniteLoss { layer: usize },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Data(#[from] DataError),
}

/// Errors raised while reading or writing datasets, images and checkpoints.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:#010x}, read {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("malformed netpbm header: {0}")]
    MalformedHeader(String),

    #[error("unsupported netpbm maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("bad checkpoint magic {0:?}")]
    BadCheckpointMagic([u8; 4]),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
