use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    AxisMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("expected a {expected}-D tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },

    #[error("{what} ({channels}) is not divisible by groups ({groups})")]
    Groups {
        what: &'static str,
        channels: usize,
        groups: usize,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("layer {path}: {source}")]
    Layer {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("weight file: {0}")]
    Format(String),

    #[error("tensor {name}: {reason}")]
    TensorMismatch { name: String, reason: String },

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Wraps the error with the layer path it occurred in.
    pub fn in_layer(self, path: impl Into<String>) -> Self {
        Error::Layer {
            path: path.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
