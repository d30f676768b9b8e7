//! Losses, regimens, dev-score tracking and checkpoints.

mod checkpoint;
mod loss;
mod record;
mod regimen;

pub use checkpoint::{
    format_weights, load_weights, parse_weights, read_spec, read_weights, save_checkpoint, SPEC_FILE, WEIGHTS_FILE,
};
pub use loss::{mle_loss, LossCalculator, MleLoss, ReinforceLoss, RewardFn, Unrolled};
pub use record::{DevOutcome, DevRecord};
pub use regimen::{
    train_batch, CheckpointTarget, MultiTaskTrainingRegimen, RunCtx, Schedule, SimpleTrainingRegimen, Trainer,
    TrainSummary, TrainingRegimen, TrainingTask,
};
