//! Dense-tensor math with reverse-mode gradients.
//!
//! The op menu is exactly what the model needs: matmul, transpose, row
//! softmax, tanh/sigmoid, elementwise add/mul, concat, row sum/mean, scalar
//! scale, and a fused pairwise-MLP scorer. Everything else in the crate is
//! composed from these, so the whole gradient surface is covered by
//! `grad_check`.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, DEFAULT_STEP};
pub use tape::{broadcast_rows, linear, sum_all, Tape, Var};
pub use tensor::Tensor;
