use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("collection is empty")]
    EmptyCollection,
    #[error("every document vector has zero norm")]
    AllZeroVectors,
    #[error("embedding contains a non-finite component at position {0}")]
    NonFinite(usize),
    #[error("document norm {norm} exceeds the collection scale {max_norm}")]
    NormExceedsScale { norm: f64, max_norm: f64 },
    #[error("query embedding has zero norm")]
    ZeroNormQuery,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("duplicate turn id {turn:?} in conversation {conversation:?}")]
    DuplicateTurn { conversation: String, turn: String },
    #[error("result set is empty")]
    EmptyResultSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cache is empty")]
    EmptyCache,
    #[error("cache would hold {requested} documents, above the configured cap of {cap}")]
    CacheCapacityExceeded { requested: usize, cap: usize },
    #[error("cutoff {k} exceeds result length {available}")]
    CutoffTooLarge { k: usize, available: usize },
    #[error("no eligible queries: every conversation has a single turn")]
    NoEligibleQueries,
    #[error("run is empty")]
    EmptyRun,
    #[error("no tuning point has coverage at or below {floor}")]
    NoLowCoveragePoints { floor: f64 },
    #[error("need at least two samples per group, got {0} and {1}")]
    InsufficientSamples(usize, usize),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCollection => "EmptyCollection",
            Error::AllZeroVectors => "AllZeroVectors",
            Error::NonFinite(_) => "NonFinite",
            Error::NormExceedsScale { .. } => "NormExceedsScale",
            Error::ZeroNormQuery => "ZeroNormQuery",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DuplicateId(_) => "DuplicateId",
            Error::DuplicateTurn { .. } => "DuplicateTurn",
            Error::EmptyResultSet => "EmptyResultSet",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::EmptyCache => "EmptyCache",
            Error::CacheCapacityExceeded { .. } => "CacheCapacityExceeded",
            Error::CutoffTooLarge { .. } => "CutoffTooLarge",
            Error::NoEligibleQueries => "NoEligibleQueries",
            Error::EmptyRun => "EmptyRun",
            Error::NoLowCoveragePoints { .. } => "NoLowCoveragePoints",
            Error::InsufficientSamples(..) => "InsufficientSamples",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile => "TruncatedFile",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
