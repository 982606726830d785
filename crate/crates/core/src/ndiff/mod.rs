//! Differentiable numeric core: tensors, a reverse-mode tape over a small set
//! of primitives, and a finite-difference oracle for checking it.

mod fd;
pub(crate) mod kernels;
pub mod ops;
mod store;
mod tape;
mod tensor;

pub use fd::{finite_difference, finite_difference_vec, relative_error};
pub use store::{Param, ParamStore};
pub use tape::{Gradients, Tape, Var, LAYERNORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
