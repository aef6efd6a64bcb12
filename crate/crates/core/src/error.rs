use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probability {0} is outside the open interval (0, 1)")]
    OutOfRange(f64),

    #[error("correlation {0} is outside the admissible range")]
    SingularCorrelation(f64),

    #[error("ordinal variable '{variable}' has no observations in category {category}")]
    EmptyCategory { variable: String, category: usize },

    #[error("row {row}: code {code} of ordinal variable '{variable}' is outside 1..={categories}")]
    CodeOutOfRange {
        variable: String,
        row: usize,
        code: f64,
        categories: usize,
    },

    #[error("row {row}: non-finite value in column '{variable}'")]
    NonFiniteCell { variable: String, row: usize },

    #[error("at least 2 complete rows are required, got {0}")]
    TooFewRows(usize),

    #[error("row {row} has {found} cells, expected {expected}")]
    RowLength {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("duplicate variable name '{0}'")]
    DuplicateName(String),

    #[error("ordinal variable '{0}' needs at least 2 categories")]
    TooFewCategories(String),

    #[error("continuous variable '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("thresholds of ordinal variable {variable} are not strictly increasing and finite")]
    ThresholdOrder { variable: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown coefficient pair '{0}'")]
    UnknownPair(String),

    #[error("parameter {0} is not covered by any retained equation")]
    UncoveredParameter(String),

    #[error("weight matrix has rank {rank}, below half of the {equations} equations")]
    DegenerateWeight { rank: usize, equations: usize },

    #[error("line search found no decreasing step")]
    LineSearchFailure,

    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular matrix while computing {0}")]
    SingularMatrix(&'static str),

    #[error("all {0} replications failed")]
    AllReplicationsFailed(usize),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}
