use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("input: {0}")]
    Input(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("run: {0}")]
    Run(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; last good checkpoint: {checkpoint}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        checkpoint: String,
    },

    #[error(transparent)]
    Tensor(#[from] bast_tensor::TensorError),

    #[error(transparent)]
    Audio(#[from] bast_audio::AudioError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("TOML: {0}")]
    Toml(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
