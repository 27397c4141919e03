//! Dense tensors, a reverse-mode tape, transformer encoder blocks and Adam.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig, LinearDecay};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{encode_stack, encoder_layer, multi_head_attention, AttentionWeights, Encoder, EncoderConfig, LayerWeights};
pub use params::{Gradients, Init, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
