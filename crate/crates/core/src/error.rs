use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variant names double as the machine-readable error kind emitted by the
/// CLI, so renaming one is a wire-format change.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("record `{0}`: invalid combination of source, family and collab_mode")]
    InvalidLabelCombination(String),
    #[error("record `{0}`: text is empty")]
    EmptyText(String),
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("embedding dimension {0} outside [256, 1048576] or not a power of two")]
    DimOutOfRange(usize),
    #[error("invalid n-gram range ({0}, {1})")]
    NgramRange(usize, usize),
    #[error("bad magic bytes, expected `{expected}`")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("file ends before the declared payload")]
    TruncatedFile,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),

    #[error("invalid model dimensions {0:?}")]
    DimInvalid((usize, usize, usize)),
    #[error("projection collapsed to the zero vector")]
    DegenerateEmbedding,
    #[error("vector is not unit-norm (norm {0})")]
    NotUnitNorm(f64),

    #[error("batch of size {0} is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("positive set is empty")]
    EmptyPositives,
    #[error("empty batch")]
    EmptyBatch,
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("loss or parameters became non-finite at step {step}")]
    NumericalDivergence { step: u64 },

    #[error("no entries supplied")]
    Empty,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1, got {0}")]
    BadK(usize),

    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("no pairs available for level {0}")]
    InsufficientPairs(usize),
    #[error("no base embedding for record `{0}`")]
    MissingEmbedding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable variant name, used as the `error` field of CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::DuplicateId(_) => "DuplicateId",
            Error::InvalidLabelCombination(_) => "InvalidLabelCombination",
            Error::EmptyText(_) => "EmptyText",
            Error::UnknownFamily(_) => "UnknownFamily",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::DimOutOfRange(_) => "DimOutOfRange",
            Error::NgramRange(..) => "NgramRange",
            Error::BadMagic { .. } => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::TruncatedFile => "TruncatedFile",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::CorruptRecord(_) => "CorruptRecord",
            Error::DimInvalid(_) => "DimInvalid",
            Error::DegenerateEmbedding => "DegenerateEmbedding",
            Error::NotUnitNorm(_) => "NotUnitNorm",
            Error::BatchTooSmall(_) => "BatchTooSmall",
            Error::EmptyPositives => "EmptyPositives",
            Error::EmptyBatch => "EmptyBatch",
            Error::BadTemperature(_) => "BadTemperature",
            Error::InsufficientData(_) => "InsufficientData",
            Error::NumericalDivergence { .. } => "NumericalDivergence",
            Error::Empty => "Empty",
            Error::EmptyIndex => "EmptyIndex",
            Error::BadK(_) => "BadK",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::InsufficientSamples(_) => "InsufficientSamples",
            Error::InsufficientPairs(_) => "InsufficientPairs",
            Error::MissingEmbedding(_) => "MissingEmbedding",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
