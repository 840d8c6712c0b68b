//! The unified word/definition model: two encoders into one shared layer,
//! two decoders out of it, and the five training losses.

mod check;
mod config;
mod forward;
mod layers;
mod unified;


pub use check::{grad_check_config, model_cases};
pub use config::{LossKind, LossSet, ModelConfig};
pub use forward::{ExampleWeights, Forward};
pub use layers::{positional_encoding, Block, LayerNorm, Linear};
pub use unified::{mix_seed, BatchOptions, BatchOutput, Component, LossBundle, UnifiedModel};
