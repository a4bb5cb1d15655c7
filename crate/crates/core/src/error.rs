use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("point lies outside the domain: {0}")]
    Domain(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("pair mark requested for a point with itself")]
    SelfPair,
    #[error("window is not aligned to the cell grid: {0}")]
    Alignment(String),
    #[error("expansion truncated at n_max = {n_max} leaves tail mass {tail:e} above {tolerance:e}")]
    Truncation { n_max: usize, tail: f64, tolerance: f64 },
    #[error("ratio estimate is inconsistent: zero denominator with positive numerator")]
    Inconsistency,
    #[error("point is not a member of the pattern")]
    Membership,
    #[error("need at least {needed} points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("mark error: {0}")]
    Mark(String),
    #[error("boundary effect: {0}")]
    Boundary(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
