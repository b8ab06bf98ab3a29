use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix or scalar input contains non-finite values")]
    NonFinite,

    #[error("drift matrix is not positively stable (min real part of spectrum {min_real_part:e})")]
    NotPositivelyStable { min_real_part: f64 },

    #[error("Kronecker sum C⊕C is singular (min |λi + λj| = {min_pair_sum:e})")]
    SingularKroneckerSum { min_pair_sum: f64 },

    #[error("system fails validation: {0}")]
    Validation(String),

    #[error("value {value} outside the domain of the entropy generator")]
    Domain { value: f64 },

    #[error("negative density ratio {ratio:e} at a quadrature node; only p = 2 admits signed data")]
    NegativeDensity { ratio: f64 },

    #[error("quadrature order {order} too low for Hermite level {level}")]
    QuadratureTooLow { order: usize, level: usize },

    #[error("insufficient data for fit: {usable} usable points, need {required}")]
    InsufficientData { usable: usize, required: usize },

    #[error("envelope ratio grows by {growth:.3e} (relative) over the tail window; wrong rate or defect?")]
    EnvelopeViolation { growth: f64 },

    #[error("initial entropy is infinite")]
    InfiniteEntropy,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
