//! Dense tensors and the reverse-mode engine used by every layer and loss.

mod element;
mod graph;
pub mod kernels;
#[allow(clippy::module_inception)]
mod tensor;

pub use element::Element;
pub use graph::{Gradients, Graph, Var};
pub use kernels::Conv2dSpec;
pub use tensor::Tensor;
