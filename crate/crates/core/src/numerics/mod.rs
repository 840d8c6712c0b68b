//! Differentiable substrate: tensors, a reverse-mode tape, losses, Adam and
//! finite-difference gradient checks. Everything is `f64`.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, grad_check_store, CaseReport, GradCheckCase};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, ParamGrads, Tape, Var};
pub use tensor::Tensor;
