//! Minimal dense-tensor engine: row-major tensors, a recorded operation
//! graph with reverse-mode differentiation, Adam, and a flat checkpoint
//! format.

mod adam;
pub mod checkpoint;
mod error;
mod float;
mod graph;
pub mod ops;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::TensorFile;
pub use error::{Result, TensorError};
pub use float::{gemm, Float};
pub use graph::{BackwardStats, Graph, Op, Var};
pub use param::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
