use lcr_tensor::TensorError;

use crate::entropy::EntropyError;

/// Errors surfaced by the codec, classifiers, data handling, and workflows.
#[derive(Debug, thiserror::Error)]
pub enum LcrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("{context}: {source}")]
    Stream {
        context: String,
        source: EntropyError,
    },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, LcrError>;

impl LcrError {
    /// Maps numeric tensor failures (non-finite values) onto [`LcrError::Numeric`].
    pub fn is_numeric(&self) -> bool {
        matches!(self, LcrError::Numeric(_) | LcrError::Tensor(TensorError::NonFinite(_)))
    }

    /// Attaches file context to entropy-decoding failures.
    pub fn with_context(self, context: impl Into<String>) -> Self {
        match self {
            LcrError::Entropy(source) => LcrError::Stream { context: context.into(), source },
            other => other,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LcrError::Config(_) => 2,
            LcrError::Data(_) | LcrError::Image(_) | LcrError::Entropy(_) | LcrError::Stream { .. } => 3,
            e if e.is_numeric() => 4,
            _ => 1,
        }
    }
}
