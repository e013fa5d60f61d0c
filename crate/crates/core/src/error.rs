use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("covariance matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("pattern observes no coordinate; marginal is empty")]
    EmptyMarginal,

    #[error("pattern has no missing coordinate")]
    NoMissingCoordinates,

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region shape not produced by the coarsening rule: {0}")]
    InvalidRegion(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("likelihood underflow at record {record}")]
    Underflow { record: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { what, expected, got }
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Underflow { .. })
    }
}
