use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cluster")]
    EmptyCluster,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite feature value in sample {0}")]
    NonFinite(u64),

    #[error("clusters {0} and {1} share members")]
    OverlappingClusters(usize, usize),

    #[error("duplicate sample id {0}")]
    DuplicateSample(u64),

    #[error("unknown sample id {0}")]
    UnknownSample(u64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class {0} absent from labels")]
    ClassAbsent(u32),

    #[error("sample {0} has no label")]
    MissingLabel(u64),

    #[error("pairwise metrics need at least two samples")]
    TooFewSamples,

    #[error("degenerate region: {0} px")]
    DegenerateRegion(usize),

    #[error("empty mask")]
    EmptyMask,

    #[error("pixel model: {0}")]
    PixelModel(String),

    #[error("missing feature vectors for sample ids {0:?}")]
    MissingFeatures(Vec<u64>),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
