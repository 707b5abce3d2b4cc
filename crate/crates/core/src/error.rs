use thiserror::Error;

/// Errors produced by the despeckling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel {index} has non-positive value {value}")]
    NonPositivePixel { index: usize, value: f64 },

    #[error("image has no positive pixel")]
    AllZeroImage,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("image {width}x{height} is too small: {reason}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        reason: String,
    },

    #[error("pixel ({row}, {col}) is not covered by any patch group")]
    UncoveredPixel { row: usize, col: usize },

    #[error("SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("proximal Newton solve failed at pixel {index} (residual {residual:e})")]
    ProxDivergence { index: usize, residual: f64 },

    #[error("weight {index} of group {group} is zero")]
    ZeroWeight { group: usize, index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("malformed image data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
