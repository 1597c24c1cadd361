//! Tensors, reverse-mode differentiation, Adam, finite-difference checking
//! and the checkpoint format.

mod adam;
mod checkpoint;
mod graph;
mod gradcheck;
pub mod kernels;
mod param;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamStore, Parameter};
pub use tensor::Tensor;
