//! Seeded, schedule-independent training with an adaptive-moment
//! optimizer, early stopping on validation loss and binary checkpoints.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{
    checkpoint_bytes, ensure_same_architecture, load_checkpoint, load_checkpoint_expecting,
    parse_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, MAGIC,
    NORMALIZATION, VERSION,
};
pub use trainer::{
    evaluate_loss, loss_log_csv, sample_noise, train, write_loss_log, EpochRecord, TrainConfig,
    TrainOutcome, LOSS_LOG_HEADER,
};
