//! Core of a network that maps definitions to word vectors and word vectors to
//! definitions through one shared layer.

pub mod data;
pub mod error;
pub mod evalmetrics;
pub mod exec;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
