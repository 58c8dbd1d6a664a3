use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum JpacError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid network instance: {0}")]
    InvalidInstance(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index set is empty")]
    EmptySet,

    #[error("link set {0:?} is not admissible")]
    NotAdmissible(Vec<usize>),

    #[error("iterate left the interior: {0}")]
    NotInterior(String),

    #[error("linear solve failed after {retries} regularization retries")]
    SingularSystem { retries: usize },

    #[error("iteration limit {0} exceeded")]
    IterationLimit(usize),

    #[error("iterate left floating-point range at iteration {iteration}: {detail}")]
    NumericalBreakdown { iteration: usize, detail: String },

    #[error("problem size {size} exceeds the guard of {guard}")]
    GuardExceeded { size: usize, guard: usize },

    #[error("every multistart run failed; last error: {0}")]
    NoSuccessfulStart(String),

    #[error("unsupported document version {0}")]
    UnsupportedVersion(u32),

    #[error("mixed experiment rows: {0} and {1}")]
    MixedExperiments(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, JpacError>;
