//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Build a [`Graph`] of operations whose leaves are constants or named
//! slots of a [`ParameterStore`], evaluate it, and pull gradients back
//! from a scalar root:
//!
//! ```
//! use autodiff::{Graph, ParameterStore, Tensor};
//!
//! let mut store = ParameterStore::new();
//! store.insert("x", Tensor::scalar(3.0), true).unwrap();
//! let mut g = Graph::new();
//! let x = g.parameter(&store, "x").unwrap();
//! let y = g.square(x).unwrap();
//! let (values, grads) = g.gradients(y, &store).unwrap();
//! assert_eq!(values.get(y).item(), 9.0);
//! assert_eq!(grads.get("x").unwrap().item(), 6.0);
//! ```
//!
//! Shapes are checked when nodes are added. Broadcasting is limited to
//! adding (or multiplying) a `[m]` vector to every row of a `[n, m]` matrix.

pub mod check;
pub mod checkpoint;
mod error;
mod graph;
mod store;
mod tensor;

pub use check::{check_gradients, check_gradients_sampled, relative_error, GradCheckReport, SlotCheck};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId, Op, SlotGradient, Values};
pub use store::{ParameterStore, Slot};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
