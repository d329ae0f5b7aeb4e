//! Reverse-mode automatic differentiation over a dynamically recorded graph.

pub mod gradcheck;
mod graph;
mod ops;

pub use graph::{Gradients, Graph, Op, ParamId, Var};
pub use ops::{Activation, Binary, Reduction};
