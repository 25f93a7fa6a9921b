use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("no vectors")]
    NoVectors,

    #[error("line {line}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("query dimension {found} does not match store dimension {expected}")]
    QueryDimension { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("out-of-vocabulary word: {0:?}")]
    Oov(String),

    #[error("target word {0:?} is excluded from the ranking")]
    Excluded(String),

    #[error("degenerate query vector (offset norm below 1e-10)")]
    DegenerateQuery,

    #[error("degenerate relation vector: {0}")]
    DegenerateRelation(&'static str),

    #[error("empty distribution for stem {0:?}")]
    EmptyDistribution(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("constant predictor column {0:?}")]
    ConstantColumn(String),

    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad binary cache: {0}")]
    BadCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::DegenerateQuery
            | Error::DegenerateRelation(_)
            | Error::ZeroVariance(_)
            | Error::ConstantColumn(_)
            | Error::RankDeficient(_)
            | Error::InsufficientData(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoVectors => "no_vectors",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::QueryDimension { .. } => "query_dimension",
            Error::Parse { .. } => "parse",
            Error::Oov(_) => "oov",
            Error::Excluded(_) => "excluded",
            Error::DegenerateQuery => "degenerate_query",
            Error::DegenerateRelation(_) => "degenerate_relation",
            Error::EmptyDistribution(_) => "empty_distribution",
            Error::ZeroVariance(_) => "zero_variance",
            Error::ConstantColumn(_) => "constant_column",
            Error::RankDeficient(_) => "rank_deficient",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Infeasible(_) => "infeasible",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BadCache(_) => "bad_cache",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
