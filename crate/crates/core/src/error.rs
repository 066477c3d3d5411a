use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: field `{field}` out of range: {message}")]
    OutOfRange {
        row: usize,
        field: String,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("missing value for `{field}` in record `{id}`")]
    MissingValue { field: String, id: String },

    #[error("complete or quasi-complete separation (coefficient norm {norm:.2}, gradient {gradient:.3e})")]
    Separation { norm: f64, gradient: f64 },

    #[error("collinear covariates: {}", .columns.join(", "))]
    Collinearity { columns: Vec<String> },

    #[error("propensity score {score} of record `{id}` is outside (0,1)")]
    ScoreOutOfRange { id: String, score: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("incompatible estimates: {0}")]
    Incompatible(String),
}

impl Error {
    /// Errors caused by malformed input or configuration, as opposed to
    /// failures of an estimator on valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Csv(_)
                | Error::Schema(_)
                | Error::MalformedRow { .. }
                | Error::OutOfRange { .. }
                | Error::DuplicateId(_)
                | Error::Config(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
