//! Text-as-pixels language modeling toolkit.
//!
//! Text is rasterized onto fixed-height RGB strips, cut into square patches,
//! and fed to a decoder-only transformer together with (or instead of) byte
//! pair tokens. The crate covers the whole pipeline: rendering, patch and
//! shard I/O, a small BPE tokenizer, the transformer with hand-written
//! backward passes, pre-training with next-patch / next-token objectives,
//! and a fine-tuning harness with the usual classification metrics.

pub mod cli;
pub mod error;
pub mod finetune;
pub mod glyphs;
pub mod model;
pub mod patchio;
pub mod pretrain;
pub mod render;
pub mod seed;
pub mod shard;
pub mod tokenizer;

pub use error::{Error, Result};
