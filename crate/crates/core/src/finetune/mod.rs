//! Downstream tasks: heads, inputs, metrics, and the fine-tuning loop.

pub mod head;
pub mod metrics;
pub mod task;
pub mod train;

pub use head::{adapt_patch_embedding_channels, attach_task_head, build_dual_input, pooled_repr, FinetuneModel, InputBuilder};
pub use metrics::{accuracy, average_ranks, f1_binary, mcc, spearman, MetricValue};
pub use task::{EvalReport, InputModality, Metric, RenderMode, TaskKind, TaskRow, TaskSpec, TaskTable};
pub use train::{evaluate_task, finetune, predict, FinetuneConfig, FinetuneOutcome, TaskData, Targets};
