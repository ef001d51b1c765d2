//! Deterministic reverse-mode automatic differentiation over `f32` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! sweeps the tape once in reverse and returns gradients for every
//! grad-enabled leaf. Broadcasting is limited to scalar-vs-tensor.

mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{sgd_step, OptimState, OptimizerKind};
pub use tape::{Binary, Gradients, Reduce, Tape, Unary, Var, COSINE_EPS};
pub use tensor::Tensor;

pub(crate) use tape::shift_chw;
