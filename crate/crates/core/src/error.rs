use thiserror::Error;

pub type Result<T> = std::result::Result<T, MixerError>;

#[derive(Debug, Error)]
pub enum MixerError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("{family} does not support {what}")]
    Unsupported { family: String, what: String },

    #[error("{0} is data-dependent and needs an input sequence")]
    MissingInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("layer {layer}: non-finite intermediate in {stage}")]
    LayerDiverged { layer: usize, stage: &'static str },

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MixerError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        MixerError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
