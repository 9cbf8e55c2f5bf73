//! Dense `f64` arrays, a reverse-mode tape, the layer helpers the model graph
//! is assembled from, the on-disk tensor format and a finite-difference
//! gradient checker.

mod gradcheck;
mod graph;
pub mod io;
pub mod nn;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, softplus, Grads, Graph, Var};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
