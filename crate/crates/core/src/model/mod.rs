//! Decoder-only transformer over tokens and pixel patches.

pub mod checkpoint;
pub mod config;
pub mod ops;
pub mod params;
pub mod real;
pub mod transformer;

pub use checkpoint::{Checkpoint, CheckpointMeta, NamedTensor, TaskMeta, CKPT_MAGIC};
pub use config::ModelConfig;
pub use params::{LayerParams, Params, Tensor};
pub use real::Real;
pub use transformer::{
    backward, backward_from_hidden, classification_head, embed, forward, forward_cached, regression_head, Element,
    ForwardCache, SequenceInput,
};
