//! Reverse-mode differentiation over dense tensors, Adam, and a
//! finite-difference gradient oracle.

mod adam;
mod check;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::{evaluate_with_gradients, finite_difference_check};
pub use tape::{Axis, ComputationRecord, Gradients, Tape, Var};
pub use tensor::Tensor;
