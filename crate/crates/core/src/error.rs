use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid multi-index: {0}")]
    InvalidIndex(String),

    #[error("unknown {kind} {name:?} (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("kernel moment matrix S is singular (condition number {condition:.3e})")]
    SingularMoments { condition: f64 },

    #[error("point {0:?} lies outside the open unit cube (-1/2, 1/2)^d")]
    OutOfDomain(Vec<f64>),

    #[error("site {index} at {site:?} lies outside the sampling region")]
    SiteOutsideRegion { index: usize, site: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("only {n_eff} sites carry positive weight, need at least {required}")]
    NoLocalData { n_eff: usize, required: usize },

    #[error("local design matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("kernel window holds no sites, density estimate is zero")]
    DegenerateWindow,

    #[error("every bandwidth candidate failed: {0}")]
    NoFeasibleBandwidth(String),

    #[error("no retained values to summarize")]
    EmptySummary,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("expression error: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
