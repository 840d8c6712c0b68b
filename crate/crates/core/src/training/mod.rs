//! Multi-task training with early stopping, ablations and checkpoints.

mod ablation;
mod checkpoint;
mod config;
mod history;
mod trainer;

pub use ablation::{excluded_path_gradient, run_ablation, Ablation, AblationRun};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{TaskPreset, TrainConfig, ValidateEvery};
pub use history::{fmt_loss, TrainHistory, ValidationRecord};
pub use trainer::{train, validate, EarlyStopping, Progress, Trainer, Verdict, EVAL_BATCH};
