//! Pretraining: AdamW, schedules, the training loop and checkpoints.

mod checkpoint;
mod optim;
mod pretrain;
mod schedule;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{clip_grad_norm, global_norm, AdamW, Moments};
pub use pretrain::{collapse_metric, pretrain, StepStats, TrainConfig, TrainReport, Trainer};
pub use schedule::{Schedule, ScheduleConfig};
