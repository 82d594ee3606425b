//! Error and warning types shared by every module.

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure cases surfaced by public operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("data length {got} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("right inverse requires rows <= cols, got {rows}x{cols}")]
    NotWide { rows: usize, cols: usize },

    #[error("matrix is rank-deficient or ill-conditioned (condition estimate {estimate:.3e} exceeds limit {limit:.3e})")]
    IllConditioned { estimate: f64, limit: f64 },

    #[error("invalid chain dims: {reason}")]
    InvalidChain { reason: String },

    #[error("chain sampling stayed ill-conditioned after {attempts} attempts")]
    RetriesExhausted { attempts: usize },

    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },

    #[error("region id {id} out of range (expected < {limit})")]
    IdOutOfRange { id: u32, limit: usize },

    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },

    #[error("superpixel {id} received zero total weight")]
    ZeroWeight { id: usize },

    #[error("cross-entropy target is not a distribution: {context}")]
    NotADistribution { context: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format in {path}: {reason}")]
    BadFormat { path: String, reason: String },
}

/// Non-fatal conditions reported alongside a defined result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// A superpixel row with no member pixels was encoded as zeros.
    EmptySuperpixel { id: u32 },
    /// The predicted edge mask has no edge pixels.
    EmptyPrediction,
    /// The ground-truth edge mask has no edge pixels.
    EmptyGroundTruth,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::EmptySuperpixel { id } => {
                write!(f, "superpixel {id} has no member pixels; encoded as zeros")
            }
            Warning::EmptyPrediction => write!(f, "predicted edge mask is empty; score defined as 0"),
            Warning::EmptyGroundTruth => {
                write!(f, "ground-truth edge mask is empty; score defined as 0")
            }
        }
    }
}
