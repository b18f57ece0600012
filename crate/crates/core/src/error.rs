use thiserror::Error;

/// Errors raised by tensor storage, operators, autodiff, and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op}: incompatible shapes {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected a {expected}-d tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: invalid geometry: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("neg_log_eps: argument {value} + epsilon {eps} is not positive")]
    NonPositiveLog { value: f32, eps: f32 },

    #[error("{op}: index {index} out of range for {len} elements")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("parameter has no gradient; run backward before stepping")]
    MissingGrad,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
}
