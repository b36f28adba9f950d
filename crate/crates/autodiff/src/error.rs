use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err<T>(op: &'static str, expected: impl ToString, got: impl ToString) -> Result<T> {
    Err(TensorError::Dimension {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    })
}
