//! Built-in differentiable operations.
//!
//! Each op is a small struct implementing [`Op`](crate::Op); the matching
//! `Graph` convenience method records it.

mod activation;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod shape;

pub use activation::{Dropout, Gelu};
pub use elementwise::{AddSub, Mul, Scale};
pub use matmul::MatMul;
pub use norm::{LayerNorm, Softmax};
pub use reduce::{Mean, Sum};
pub use shape::{Concat, Reshape, SwapAxes};
