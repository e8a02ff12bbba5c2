use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rank-preserving row removal hit a vanishing denominator.
    #[error("downdate breakdown: denominator {denominator:e} below guard")]
    DowndateBreakdown { denominator: f64 },

    /// The removed row is not consistent with the maintained factor.
    #[error("range condition violated: {which} residual {residual:e}")]
    RangeCondition { which: &'static str, residual: f64 },

    #[error("insufficient data: need at least {required} samples, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("column not found: {0}")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
