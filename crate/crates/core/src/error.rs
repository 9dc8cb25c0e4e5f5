use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input data or parameters do not conform to the model.
    #[error("validation error: {0}")]
    Validation(String),

    /// A data cell lies outside `0..=m`.
    #[error("category {value} at row {row}, column {column} is outside 0..={max}")]
    CategoryOutOfBounds {
        row: usize,
        column: usize,
        value: u32,
        max: usize,
    },

    /// Exhaustive enumeration would exceed the configured state cap.
    #[error(
        "state space of {states} configurations exceeds the enumeration cap of {cap}; \
         use the pseudo-likelihood, CoRe or DMH methods instead"
    )]
    Capacity { states: u128, cap: u64 },

    /// Bad configuration value (non-positive prior sd, inconsistent sampler lengths, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Factorization or solve failed.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
