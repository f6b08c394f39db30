use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what}: dimension must be at least 1")]
    ZeroDimension { what: &'static str },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: value {value} outside [0, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("dictionary atom {index} collapsed to zero norm")]
    DeadAtom { index: usize },

    #[error(
        "training diverged at epoch {epoch}: objective {objective} exceeds 10x initial {initial}"
    )]
    Diverged {
        epoch: usize,
        objective: f64,
        initial: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("labels contain a single class; at least two are required")]
    SingleClass,
}

impl Error {
    /// True for failures caused by the numbers themselves (divergence,
    /// overflow) rather than by malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::DeadAtom { .. }
        )
    }
}
