use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("dual variable {index} is infeasible (value {value})")]
    InfeasibleDual { index: usize, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("starting point violates the spectral constraint (lambda_max = {lambda_max})")]
    InfeasibleStart { lambda_max: f64 },

    #[error("no eigenvalue reached the threshold {threshold} (largest was {largest})")]
    NoFiltersRecovered { largest: f64, threshold: f64 },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt model stream at byte {offset}: {reason}")]
    CorruptStream { offset: usize, reason: String },

    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: u32,
        requested: usize,
        available: usize,
    },

    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
