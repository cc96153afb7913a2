//! Minimal reverse-mode automatic differentiation over dense f64 tensors.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_gradient_norm, global_norm, Adam, PlateauScheduler};
pub use tape::{log_cosh, Gradients, Tape, Var};
pub use tensor::{SparseMatrix, Tensor};
