use thiserror::Error;

#[derive(Debug, Error)]
pub enum ErcError {
    #[error("invalid sample size {0}")]
    InvalidSampleSize(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("only {found} nonnegative exposures after oversampling at {multiplier}x (needed {needed})")]
    InsufficientNonnegative {
        found: usize,
        needed: usize,
        multiplier: f64,
    },

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("all regression weights are zero")]
    ZeroWeights,

    #[error("degenerate exposure: all values are equal")]
    DegenerateExposure,

    #[error("insufficient support for break point")]
    InsufficientBreakPointSupport,

    #[error("infeasible balance constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("caliper too small: no grid level has an eligible match")]
    CaliperTooSmall,

    #[error("empty grid")]
    EmptyGrid,

    #[error("reference exposure {reference} outside [{lower}, {upper}]")]
    ReferenceOutOfRange {
        reference: f64,
        lower: f64,
        upper: f64,
    },

    #[error("all event rates are zero")]
    AllRatesZero,

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("entropy balancing did not converge")]
    NotConverged,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ErcError>;
