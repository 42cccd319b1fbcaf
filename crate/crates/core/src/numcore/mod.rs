//! Dense tensors, reverse-mode automatic differentiation and AdamW.
//!
//! Everything is `f64`: gradient checks against central differences need the
//! headroom, and at desk scale the cost is irrelevant.

mod adamw;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use adamw::{adamw_step, AdamW, OptState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
