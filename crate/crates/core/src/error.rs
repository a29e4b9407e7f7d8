use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke a documented precondition (shape mismatch, index range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The effective channel is too ill-conditioned for zero forcing.
    #[error("degenerate geometry: condition number {condition:.3e} exceeds {limit:.0e}")]
    DegenerateGeometry { condition: f64, limit: f64 },

    #[error("corrupt codebook file: {0}")]
    CorruptCodebook(String),

    #[error("unsupported codebook format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },

    #[error("codebook was generated for config hash {found:016x}, expected {expected:016x}")]
    ConfigMismatch { found: u64, expected: u64 },

    #[error("codebook file {} not found; run `holotrain gen-codebook` first", .0.display())]
    MissingCodebook(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
