//! Poly learning-rate schedule, SGD with momentum, the main + auxiliary
//! loss step, checkpoints and the epoch loop.

pub mod checkpoint;
mod schedule;
mod sgd;
mod trainer;

pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use schedule::{adjusted_base_lr, poly_lr, REFERENCE_BATCH};
pub use sgd::{sgd_step, OptimizerState};
pub use trainer::{epoch_batches, train, train_step, LogRow, StepLosses, TrainConfig, CSV_HEADER};
