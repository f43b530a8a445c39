use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PsaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PsaError {
    #[error("embedding has no components")]
    EmptyEmbedding,

    #[error("non-finite component at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no tokens")]
    NoTokens,

    #[error("attention score {score} for token {token_id} outside [0, 1]")]
    ScoreOutOfRange { token_id: u32, score: f64 },

    #[error("no semantic embedding available for sample {0:?}")]
    NoSemanticEmbedding(String),

    #[error("more clusters than points ({clusters} > {points})")]
    TooManyClusters { clusters: usize, points: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("undefined cosine for zero vector")]
    ZeroVector,

    #[error("k = {k} out of range 1..={max}")]
    TopKOutOfRange { k: usize, max: usize },

    #[error("no surrogate labels; lower min_cluster_size")]
    NoSurrogateLabels,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid prototype space: {0}")]
    InvalidSpace(String),

    #[error("mask pair {index}: predicted is {predicted:?} but ground truth is {ground_truth:?} (width, height)")]
    MaskShapeMismatch {
        index: usize,
        predicted: (usize, usize),
        ground_truth: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Failures reading or writing the on-disk formats. Each variant carries a
/// stable [`code`](FormatError::code) for scripting.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("fingerprint mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    FingerprintMismatch { stored: u64, computed: u64 },

    #[error("{field} = {value} exceeds the limit of {limit}")]
    SizeCap {
        field: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("mask {path}: {message}")]
    Mask { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic { .. } => "bad-magic",
            FormatError::VersionMismatch { .. } => "version-mismatch",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingBytes(_) => "trailing-bytes",
            FormatError::FingerprintMismatch { .. } => "fingerprint-mismatch",
            FormatError::SizeCap { .. } => "size-cap",
            FormatError::InvalidHeader(_) => "invalid-header",
            FormatError::InvalidRecord(_) => "invalid-record",
            FormatError::Manifest { .. } => "manifest",
            FormatError::Mask { .. } => "mask",
            FormatError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}
