use thiserror::Error;

/// Errors surfaced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {lhs:?}, right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} requires {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },

    #[error("non-finite value ({value}) produced by {op}")]
    NonFinite { op: &'static str, value: f64 },

    #[error("reduction over empty {what} in {op}")]
    EmptyReduction { op: &'static str, what: &'static str },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        op: &'static str,
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("backward requires a scalar output, got shape {got:?} ({numel} elements)")]
    NonScalarOutput { got: Vec<usize>, numel: usize },

    #[error("tensor id {id} does not belong to this tape (len {len})")]
    UnknownTensor { id: usize, len: usize },

    #[error("square root of negative value {value}")]
    NegativeSqrt { value: f64 },

    #[error("division by zero in {op}")]
    DivisionByZero { op: &'static str },
}

pub type Result<T> = std::result::Result<T, Error>;
