//! Dense `f64` tensors with a tape-based reverse-mode gradient engine.
//!
//! A [`Graph`] records operations over [`Var`] handles during the forward
//! pass. Trainable weights live in a [`ParamStore`] that outlives any single
//! graph; [`Graph::backward`] returns per-parameter gradients which an
//! [`Optimizer`] then applies.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod stable;
mod tensor;

pub use checkpoint::{Checkpoint, DType};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{clip_global_norm, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use stable::{log_sum_exp, softmax};
pub use tensor::Tensor;
