//! Minimal dense-tensor library with reverse-mode differentiation.
//!
//! Forward ops are recorded on a [`Tape`]; [`Tape::backward`] returns the
//! gradients of every trainable leaf. Storage is generic over [`Scalar`] so the
//! same code runs in `f32` for training and `f64` for gradient checks.

mod error;
pub mod init;
mod kernels;
pub mod loss;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{NeuralError, Result};
pub use loss::{one_hot, softmax, softmax_cross_entropy};
pub use optim::{Adam, AdamConfig};
pub use scalar::{gemm, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
