use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: eigenvalue {eigenvalue:e} <= floor {floor:e}")]
    NotSpd { eigenvalue: f64, floor: f64 },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("transform is singular or ill-conditioned (condition number {condition:e})")]
    SingularTransform { condition: f64 },

    #[error("bad dimensions: {0}")]
    BadDims(String),

    #[error("retraction lost rank")]
    RankDeficient,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate segment: {0}")]
    DegenerateSegment(String),

    #[error("bad window: {0}")]
    BadWindow(String),

    #[error("generation failed: {0}")]
    GenerationFailure(String),

    #[error("class {0} has no examples")]
    EmptyClass(i64),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("all {restarts} restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: String },

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI output and FFI codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NotSpd { .. } => "NotSpd",
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularTransform { .. } => "SingularTransform",
            Error::BadDims(_) => "BadDims",
            Error::RankDeficient => "RankDeficient",
            Error::InsufficientData(_) => "InsufficientData",
            Error::DegenerateSegment(_) => "DegenerateSegment",
            Error::BadWindow(_) => "BadWindow",
            Error::GenerationFailure(_) => "GenerationFailure",
            Error::EmptyClass(_) => "EmptyClass",
            Error::Schema(_) => "SchemaError",
            Error::Config(_) => "ConfigError",
            Error::AllRestartsFailed { .. } => "AllRestartsFailed",
            Error::Assertion(_) => "AssertionFailed",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
