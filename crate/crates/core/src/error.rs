use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("matrix {0:?} has determinant {1}, expected +1 or -1")]
    NotUnimodular([[i64; 2]; 2], i64),
    #[error("matrix {0:?} is not hyperbolic (|trace| = {1})")]
    NotHyperbolic([[i64; 2]; 2], i64),
    #[error("cover size must be a positive integer, got {0}")]
    InvalidCover(i64),
    #[error("period must be at least 1")]
    InvalidPeriod,
    #[error("period {period} has {count} points, above the cap {cap}")]
    PeriodCapExceeded { period: u32, count: u128, cap: u32 },
    #[error("heteroclinic frame needs two distinct fixed points")]
    CoincidentFixedPoints,
    #[error("no heteroclinic intersection found within search radius {0}")]
    NoHeteroclinic(f64),
    #[error("invalid bump profile: {0}")]
    InvalidProfile(String),
    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("series needs {needed} terms for tolerance {tol:e}, cap is {cap}")]
    TruncationCapExceeded { needed: usize, cap: usize, tol: f64 },
    #[error("inverse conjugacy did not reach tolerance at ({x}, {y}): residual {residual:e}")]
    InversionFailed { x: f64, y: f64, residual: f64 },
    #[error("root refinement did not converge: residual {0:e}")]
    RefinementFailed(f64),
    #[error("grid file: {0}")]
    GridFormat(String),
    #[error("grid checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: u64, computed: u64 },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("config key `{key}` from {origin}: {msg}")]
    ConfigValue { key: String, origin: String, msg: String },
    #[error("need at least {needed} usable scales, got {got}")]
    InsufficientScales { needed: usize, got: usize },
    #[error("{failed} of {total} pair evaluations failed")]
    EvaluatorFailures { failed: usize, total: usize },
    #[error("tangent vector has norm {norm} > 1 at n = {index}")]
    UnboundedTangent { index: i64, norm: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit code: 2 config, 3 numeric, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. }
            | LabError::ConfigValue { .. }
            | LabError::NotUnimodular(..)
            | LabError::NotHyperbolic(..)
            | LabError::InvalidCover(_)
            | LabError::InvalidPeriod
            | LabError::CoincidentFixedPoints
            | LabError::InvalidProfile(_)
            | LabError::InvalidParameter(_) => 2,
            LabError::Io(_)
            | LabError::Csv(_)
            | LabError::Json(_)
            | LabError::GridFormat(_)
            | LabError::Checksum { .. } => 4,
            _ => 3,
        }
    }
}
