use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} expects a {expected}-d tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} values but {got} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("index {index} out of range for {op} (extent {extent})")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("NaN gradient for parameter {name}")]
    NanGradient { name: String },
}

pub type Result<T> = std::result::Result<T, AutogradError>;
