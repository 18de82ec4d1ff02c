use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("covariance is singular beyond repair: eigenvalue #{index} = {value:e}")]
    SingularCovariance { index: usize, value: f64 },

    #[error("star rating {0} outside 1..=5")]
    RatingOutOfRange(i64),

    #[error("unknown item ids: {}", .0.join(", "))]
    UnknownItems(Vec<String>),

    #[error("unknown user id: {0}")]
    UnknownUser(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid annotation for user {user} at position {position}: {reason}")]
    InvalidAnnotation {
        user: String,
        position: usize,
        reason: String,
    },

    #[error("model kind mismatch: state is {state}, update expects {expected}")]
    KindMismatch {
        state: &'static str,
        expected: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid snapshot cache: {0}")]
    InvalidCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short, stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::SingularCovariance { .. } => "singular_covariance",
            Error::RatingOutOfRange(_) => "rating_out_of_range",
            Error::UnknownItems(_) => "unknown_item",
            Error::UnknownUser(_) => "unknown_user",
            Error::Parse { .. } => "parse",
            Error::InvalidAnnotation { .. } => "invalid_annotation",
            Error::KindMismatch { .. } => "kind_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidCache(_) => "invalid_cache",
            Error::Io(_) => "io",
        }
    }
}
