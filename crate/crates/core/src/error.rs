use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("{what} is not positive semi-definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveSemiDefinite { what: &'static str, min_eig: f64 },

    #[error("{what} is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { what: &'static str, min_eig: f64 },

    #[error("switching sequence starts with label {found}, but the initial state classifies as {expected}")]
    SequenceMismatch { expected: usize, found: usize },

    #[error("label {label} out of range for {regions} regions")]
    LabelOutOfRange { label: usize, regions: usize },

    #[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
    Singular { pivot: f64, column: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations")]
    RiccatiDivergence { iterations: usize },
}
