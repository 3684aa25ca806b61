//! Minimal reverse-mode differentiation over dense f64 tensors.
//!
//! The primitive set covers exactly what the geometry and loss formulas
//! need; there is no operator fusion or graph rewriting. Evaluation and
//! backward sweeps run in fixed topological order so results are bitwise
//! reproducible.

mod check;
mod graph;
mod tensor;

pub use check::{finite_diff_check, sgd_step, GradientReport, SgdParam};
pub use graph::{Bindings, Gradients, Graph, GraphError, NodeId};
pub use tensor::Tensor;
