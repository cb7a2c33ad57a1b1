//! Minimal dense-tensor engine: reverse-mode differentiation, the transformer
//! encoder, and AdamW.

pub mod checkpoint;
pub mod encoder;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use encoder::{
    encoder_forward, multihead_self_attention, Encoder, EncoderConfig, Mode, MultiHeadAttention,
};
pub use graph::{Graph, Var};
pub use layers::{LayerNorm, Linear, Mlp};
pub use optim::{adamw_step, AdamWConfig, AdamWState, PlateauScheduler};
pub use params::{Gradients, ParamId, ParamSet};
pub use tensor::{softmax_columns, softmax_rows, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("position {position} outside lookup table of size {limit}")]
    PositionOutOfRange { position: usize, limit: usize },
    #[error("gradient requested for non-scalar node of shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
