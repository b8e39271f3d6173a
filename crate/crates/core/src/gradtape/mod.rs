//! Reverse-mode differentiation over image-valued computation graphs.
//!
//! A [`Graph`] is built once from a closed set of ops, evaluated with
//! [`Graph::forward`] and differentiated with [`Graph::backward`]. Node ids are
//! handed out in creation order, so the node list is always topologically
//! sorted.
//!
//! ```
//! use std::collections::BTreeMap;
//! use texdistill::gradtape::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.input("x");
//! let y = g.mul(x, x);
//! g.set_outputs(&[y]);
//!
//! let mut inputs = BTreeMap::new();
//! inputs.insert("x".to_string(), Tensor::scalar(3.0).with_grad());
//! let out = g.forward(&inputs).unwrap();
//! assert_eq!(out[0].data(), &[9.0]);
//! let grads = g.backward(&Tensor::scalar(1.0)).unwrap();
//! assert_eq!(grads["x"].data(), &[6.0]);
//! ```

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Graph, NodeId};
pub use kernels::Wrap;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("expected an [H, W, C] image, got shape {0:?}")]
    NotAnImage(Vec<usize>),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapePair { left: Vec<usize>, right: Vec<usize> },
    #[error("node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("input `{0}` is not bound")]
    MissingInput(String),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("expected {expected} output gradients, got {got}")]
    OutputGradCount { expected: usize, got: usize },
    #[error("output gradient {index} has shape {got:?}, output has shape {expected:?}")]
    OutputGradShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}
