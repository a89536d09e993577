use std::path::PathBuf;

/// Errors produced anywhere in the hiding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("ingestion failed in {dir}: {reason}")]
    Ingestion { dir: PathBuf, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("payload of {bits} bits does not fit capacity of {capacity} bits")]
    Capacity { bits: usize, capacity: usize },

    #[error("payload size mismatch: expected {expected} bits, got {actual}")]
    PayloadSize { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("uncorrectable codeword {block}")]
    Uncorrectable { block: usize },

    #[error("corrupt payload framing: {0}")]
    Framing(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing ground truth for {0}")]
    MissingGroundTruth(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
