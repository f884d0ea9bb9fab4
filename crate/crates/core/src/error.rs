use thiserror::Error;

/// Errors produced anywhere in the readout / tomography chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported qubit count {0} (expected 1..=4)")]
    QubitCount(usize),

    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector of length {0} is not a perfect square")]
    NotSquare(usize),

    #[error("operator is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("channel bands overlap: {a_hz} Hz and {b_hz} Hz closer than one channel bandwidth")]
    OverlappingBands { a_hz: f64, b_hz: f64 },

    #[error("{count} samples clipped beyond full scale {full_scale}")]
    Clipping { count: usize, full_scale: f64 },

    #[error("shot misalignment: channel {channel} has {got} shots, expected {expected}")]
    ShotMisalignment {
        channel: usize,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "rank deficient system: rank {rank} of {cols} columns ({deficiency} missing directions)"
    )]
    RankDeficient {
        rank: usize,
        cols: usize,
        deficiency: usize,
    },

    #[error("missing tomography configuration {0}")]
    MissingConfiguration(String),

    #[error("record format error: {0}")]
    Format(String),

    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
