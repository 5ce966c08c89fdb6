//! Optimization, the early-stopping training protocol, checkpoints and
//! inference entry points.

pub mod adam;
pub mod checkpoint;
pub mod inference;
pub mod protocol;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use inference::{evaluate, predict, predict_chunked, EvalOptions, Prediction, CHAPTER_GROUPING};
pub use protocol::{
    run_protocol, EarlyStopMetric, EarlyStopping, EpochRecord, EpochRunner, StopReason, TrainConfig, TrainHistory,
    Verdict,
};
pub use trainer::{batch_gradients, initial_params, train, train_from};
