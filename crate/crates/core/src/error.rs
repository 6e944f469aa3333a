use thiserror::Error;

/// Errors raised anywhere in the recovery stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdctError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty data matrix (p = 0)")]
    EmptyData,
    #[error("chart violation: {0}")]
    ChartViolation(String),
    #[error("vector is not tangent at q: |<delta, q>| = {0:e}")]
    InvalidTangent(f64),
    #[error("trust-region subproblem failure: {0}")]
    SubproblemFailure(String),
    #[error("singular gram matrix: sigma_min/sigma_max = {0:e}")]
    SingularGram(f64),
    #[error("degenerate LP data: {0}")]
    DegenerateData(String),
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Format(String),
}

impl From<std::io::Error> for SdctError {
    fn from(e: std::io::Error) -> Self {
        SdctError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SdctError>;
