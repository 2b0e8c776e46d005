//! Reverse-mode automatic differentiation on dense CPU tensors.
//!
//! The engine records every operation on a [`Graph`] tape. Parameters enter as
//! leaves via [`Graph::param`], frozen data via [`Graph::constant`]. Supported
//! ops cover what a convolutional autoencoder with attention needs: unpadded
//! convolution plus explicit zero/reflect padding, group normalization,
//! nearest upsampling, batched matmul and softmax, and the usual pointwise
//! nonlinearities and reductions.

mod conv;
mod error;
mod graph;
mod matmul;
mod norm;
mod pad;
mod resize;
mod scalar;
mod tensor;

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;

pub use error::{Error, Result};
pub use graph::{softplus, Gradients, Graph, Var};
pub use pad::{source_index as pad_source_index, PadMode};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
