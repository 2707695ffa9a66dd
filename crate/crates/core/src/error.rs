use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = CurateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CurateError {
    #[error("missing manifest: {0}")]
    MissingManifest(PathBuf),

    #[error("missing shard: {0}")]
    MissingShard(PathBuf),

    #[error("checksum mismatch in shard {path}: manifest {expected:08x}, file {actual:08x}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("shard {path}: manifest declares {declared} records, file holds {actual}")]
    RecordCountMismatch {
        path: PathBuf,
        declared: u64,
        actual: u64,
    },

    #[error("invalid record {uid}: {}", format_violations(.violations))]
    InvalidRecord {
        uid: String,
        violations: Vec<Violation>,
    },

    #[error("pool invariant violated: {0}")]
    PoolInvariant(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("embedding sidecar {path}: length mismatch (header implies {expected} payload bytes, found {actual})")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("embedding sidecar {path}: non-finite entry in row {row}")]
    NonFiniteEmbedding { path: PathBuf, row: usize },

    #[error("embedding sidecar {path}: {message}")]
    BadSidecar { path: PathBuf, message: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("record {uid}: zero-norm embedding")]
    ZeroNormEmbedding { uid: String },

    #[error("record {uid} has no embedding reference for space {space}")]
    MissingEmbeddingRef { uid: String, space: String },

    #[error("record {uid}: embedding row {row} out of bounds for space {space} ({rows} rows)")]
    EmbeddingRefOutOfBounds {
        uid: String,
        space: String,
        row: u64,
        rows: usize,
    },

    #[error("record {uid} has no score named {score}")]
    MissingScore { uid: String, score: String },

    #[error("record {uid} has no {field} caption")]
    MissingCaption { uid: String, field: String },

    #[error("record {uid} has no language")]
    MissingLanguage { uid: String },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),

    #[error("composition input must be a single-copy pool")]
    MultisetInput,

    #[error("duplicate uid {0} within one composition input")]
    DuplicateUid(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("zero total in composition stats")]
    ZeroTotal,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CurateError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CurateError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from the caller's inputs rather than the
    /// environment. The CLI maps this to exit code 1 (input) or 2 (internal).
    pub fn is_input_error(&self) -> bool {
        match self {
            CurateError::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData
            ),
            CurateError::Csv(_) => false,
            _ => true,
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
