use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} out of range at line {line}")]
    FieldOutOfRange { field: &'static str, line: usize },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("invalid packet: {0}")]
    InvalidPacket(String),

    #[error("invalid flow: {0}")]
    InvalidFlow(String),

    #[error("class {label:?} has {count} flows, at least {required} are required")]
    ClassTooSmall {
        label: String,
        count: usize,
        required: usize,
    },

    #[error("no packets in window")]
    EmptyWindow,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("need at least {required} inputs, got {got}")]
    NotEnoughInputs { required: usize, got: usize },

    #[error("mixed labels: expected {expected:?}, found {found:?}")]
    MixedLabels { expected: String, found: String },

    #[error(
        "mtu {mtu} is below size_ceiling/2 ({half}); the single-pass histogram form would leave remainders above mtu, use mtu_fragment_flow"
    )]
    MtuBelowHalfCeiling { mtu: u32, half: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("class set mismatch: {0}")]
    ClassSetMismatch(String),

    #[error("label length mismatch: {truth} true labels, {predicted} predicted")]
    LengthMismatch { truth: usize, predicted: usize },

    #[error("bad archive: {0}")]
    BadArchive(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
