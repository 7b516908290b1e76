use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axis} (expected {expected}, found {found})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found rank {found}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: degenerate vector (norm {norm:e} <= {floor:e})")]
    DegenerateVector {
        op: &'static str,
        norm: f64,
        floor: f64,
    },
    #[error("contract violation: {0}")]
    Contract(String),
}

impl TensorError {
    pub fn contract(msg: impl Into<String>) -> Self {
        TensorError::Contract(msg.into())
    }
}
