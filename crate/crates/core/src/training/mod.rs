//! Optimization recipe, checkpoints and batch-size sweeps.

mod checkpoint;
mod config;
mod schedule;
mod sweep;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::TrainConfig;
pub use schedule::lr_schedule;
pub use sweep::{sweep_batch_size, SweepPoint, SweepReport, TrendViolation};
pub use trainer::{train, EvalRecord, TrainOutcome, Trainer, TrainingData};
