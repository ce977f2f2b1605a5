use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Parameter vector length does not match `3H + 1`.
    #[error("parameter layout error: expected length {expected} for H = {hidden}, got {actual}")]
    Layout {
        hidden: usize,
        expected: usize,
        actual: usize,
    },

    #[error("hidden width must be positive")]
    ZeroWidth,

    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid target: {0}")]
    Target(String),

    #[error("oracle error: {0}")]
    Oracle(String),
}
