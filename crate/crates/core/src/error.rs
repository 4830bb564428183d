use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("render overflow: need {needed} patches but only {available} are available")]
    RenderOverflow { needed: usize, available: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("corrupt shard: {0}")]
    CorruptShard(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("corrupt vocabulary file: {0}")]
    CorruptVocab(String),

    #[error("cannot train a tokenizer on an empty corpus")]
    EmptyCorpus,

    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    UnknownId { id: u32, vocab_size: usize },

    #[error("rotary embeddings need an even head dimension, got {0}")]
    OddHeadDim(usize),

    #[error("sequence of length {len} exceeds the limit of {max}")]
    Length { len: usize, max: usize },

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("modality `{0}` is enabled but no data of that kind was provided")]
    MissingModality(String),

    #[error("batch mix ratio must have at least one positive entry")]
    AllZeroRatio,

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("vocabulary mismatch: tokenizer has {tokenizer} entries, model expects {model}")]
    VocabMismatch { tokenizer: usize, model: usize },

    #[error("sequence has no content position")]
    EmptySequence,

    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
