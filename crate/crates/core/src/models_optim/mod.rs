//! Score models, backpropagation, Adam and the training loop.

mod adam;
mod model;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use model::{LinearModel, MlpModel, Model, ModelSpec, DEFAULT_HIDDEN};
pub use train::{
    objective_and_grad, train, write_history, Checkpoint, EpochRecord, TrainConfig, TrainOutcome,
    CHECKPOINT_VERSION,
};
