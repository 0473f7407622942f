use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid axis {axis} for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },

    #[error("{op}: kernel extent {kernel} exceeds padded input extent {padded}")]
    KernelTooLarge {
        op: &'static str,
        kernel: usize,
        padded: usize,
    },

    #[error("dropout probability must lie in [0, 1), got {0}")]
    InvalidProbability(f64),

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on a tensor that does not require grad")]
    NotOnTape,

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("fold protocol needs exactly 24 actors with IDs 1..=24, got {0:?}")]
    ActorCount(Vec<u32>),

    #[error("missing feature file {path} for sample `{sample}`")]
    MissingFile { sample: String, path: PathBuf },

    #[error("sample `{sample}`: declared shape {declared:?} does not match file shape {found:?}")]
    SampleShapeMismatch {
        sample: String,
        declared: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("I/O error on {path}: {source}")]
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

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::MissingFile { .. })
    }
}
