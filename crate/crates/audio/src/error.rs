use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Tensor(#[from] bast_tensor::TensorError),
}

pub type Result<T, E = AudioError> = std::result::Result<T, E>;
