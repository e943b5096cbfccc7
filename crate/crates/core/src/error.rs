use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box dimensions ({0}, {1}, {2}): every edge must be at least 1")]
    InvalidBox(u32, u32, u32),

    #[error("orientation {index} out of range (0..{count})")]
    OrientationOutOfRange { index: usize, count: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no feasible placement for box {box_index} at step {step}")]
    Infeasible { box_index: usize, step: usize },

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Tensor(#[from] binpack_tensor::TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
