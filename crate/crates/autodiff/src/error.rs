#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-finite value in result")]
    NonFinite { op: &'static str },
    #[error("{op}: {message}")]
    Domain { op: &'static str, message: String },
    #[error("{op}: index {index} out of range for dimension {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid shape {shape:?} for {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("dropout rate {0} out of range")]
    BadRate(f64),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}
