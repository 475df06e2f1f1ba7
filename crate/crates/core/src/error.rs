use thiserror::Error;

/// Errors produced by model construction, fitting, filtering and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A circulant embedding has a non-positive eigenvalue; callers fall back to the dense path.
    #[error("singular circulant embedding: eigenvalue {value:e} at Fourier index {index}")]
    SingularEmbedding { index: usize, value: f64 },

    #[error("covariance is not positive definite: {0}")]
    NonPositiveDefinite(String),

    #[error("degenerate durations: all samples are equal")]
    DegenerateDuration,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("optimizer contract violated at iteration {iteration}: objective rose from {previous} to {current}")]
    OptimizerContract {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("non-finite objective at parameters {params:?}")]
    NonFinite { params: Vec<f64> },

    #[error("filter collapse at step {step}: observation impossible under every hypothesis")]
    FilterCollapse { step: usize },

    #[error("undefined metric: evaluation mask is empty")]
    EmptyMask,

    #[error("insufficient rank: needed {needed} components, data supports {available}")]
    InsufficientRank { needed: usize, available: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::SingularEmbedding { .. } => "singular_embedding",
            Error::NonPositiveDefinite(_) => "non_positive_definite",
            Error::DegenerateDuration => "degenerate_duration",
            Error::InsufficientData(_) => "insufficient_data",
            Error::OptimizerContract { .. } => "optimizer_contract",
            Error::NonFinite { .. } => "non_finite",
            Error::FilterCollapse { .. } => "filter_collapse",
            Error::EmptyMask => "empty_mask",
            Error::InsufficientRank { .. } => "insufficient_rank",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
