//! Dense `f64` tensors, tape-based reverse-mode autodiff and real DFT primitives.

pub mod checkpoint;
mod error;
pub mod fft;
mod graph;
mod tensor;

pub use checkpoint::{decode_tensors, encode_tensors, load_tensors, save_tensors};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
