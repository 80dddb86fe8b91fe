use emwave_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("invalid training config: {0}")]
    TrainConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("rollout produced a non-finite prediction at step {step}")]
    RolloutDiverged { step: usize },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Core(#[from] emwave_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SurrogateError>;
