use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("inconsistent grid: expected {expected} tokens, got {got}")]
    InconsistentGrid { expected: usize, got: usize },

    #[error("invalid strategy: {0} directions (must be 1, 2, 4 or 8)")]
    InvalidStrategy(usize),

    #[error("unknown scan direction or strategy label `{0}`")]
    UnknownLabel(String),

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("image {height}x{width} is smaller than patch size {patch}")]
    ImageTooSmall { height: usize, width: usize, patch: usize },

    #[error("class id {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("backward already called on this tape")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss is not connected to any tensor that requires grad")]
    Detached,

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }
}
