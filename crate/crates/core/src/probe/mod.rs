//! Attention probe over encoder tokens, optional fine-tuning, and metrics.

mod head;
mod metrics;
mod train;

pub use head::{ProbeHead, ProbeOutput};
pub use metrics::{auroc, compute_metrics, EvalReport, MetricSummary};
pub use train::{
    encode_samples, finetune, fit_head, score_recordings, subject_split, train_probe, ProbeConfig, ProbeOutcome,
    ProbeSample,
};
