//! Minimal differentiable-computation substrate: tensors, a reverse-mode
//! graph, the forward primitives needed by the generator and the auxiliary
//! networks, Adam, and the weights container.

pub mod check;
pub mod graph;
pub mod init;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod weights;

pub use graph::Var;
pub use optim::{Adam, ParamEntry, ParamStore};
pub use tensor::Tensor;
