//! Objectives, batching, optimizer, schedule, and the pre-training loop.

pub mod batch;
pub mod losses;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use batch::{build_pair_sequence, MixedBatch, TrainExample};
pub use losses::{next_patch_loss, next_token_loss, LossValue};
pub use optim::{adamw_update, clip_global_norm, AdamW, AdamWConfig, Moments};
pub use schedule::{lr_at, mix_schedule};
pub use trainer::{batch_loss_and_grads, evaluate, train, BatchLoss, Corpus, Preset, StepRecord, TrainConfig, TrainOutcome};
