use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dispersive approximation invalid: |detuning|/g = {ratio:.3} (must be >= 10)")]
    NotDispersive { ratio: f64 },

    #[error("filter window [{start}, {end}) out of bounds for record of {len} samples")]
    WindowOutOfBounds { start: usize, end: usize, len: usize },

    #[error("matched filter weights have length {weights}, window has {window} samples")]
    WeightLength { weights: usize, window: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid state path: {0}")]
    InvalidPath(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
