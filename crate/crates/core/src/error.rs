use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotSpd { index: usize, pivot: f64 },

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-one update is singular: 1 + v'A^-1 u = {denominator:e}")]
    SingularUpdate { denominator: f64 },

    #[error("quadrature did not converge: {0}")]
    NonConvergence(String),

    #[error("empty input")]
    EmptyInput,

    #[error("negative weight {weight} at index {index}")]
    NegativeWeight { index: usize, weight: f64 },

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("column {column} has zero variance")]
    ZeroVariance { column: String },

    #[error("missing or unmapped group label: {0}")]
    MissingGroup(String),

    #[error("group {group} has no rows")]
    GroupEmpty { group: u8 },

    #[error("finite population is empty")]
    EmptyPopulation,

    #[error("simplex hit the iteration limit after {iterations} iterations")]
    IterationLimit { iterations: usize },

    #[error("group {group} has zero total weight")]
    ZeroMass { group: u8 },

    #[error("bound violation at t = {t}: {lower} <= {value} <= {upper} does not hold")]
    BoundViolation { t: f64, value: f64, lower: f64, upper: f64 },

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    /// True for failures that come from numerical trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotSpd { .. }
                | Error::NotPsd { .. }
                | Error::SingularUpdate { .. }
                | Error::NonConvergence(_)
                | Error::RankDeficient { .. }
                | Error::IterationLimit { .. }
                | Error::BoundViolation { .. }
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(e.to_string())
    }
}
