//! Spatiotemporal masked-autoencoder (ST-MAE) video pretraining at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense `f64` tensors, a reverse-mode autodiff tape, AdamW and
//!   the checkpoint container.
//! - [`vidpipe`]: raw clip files, segment manifests, clip sampling and
//!   augmentation.
//! - [`stmae`]: patch geometry, masking, the encoder/decoder transformer and
//!   its losses.
//! - [`trainloop`]: staged pretraining and finetuning with checkpoint/resume.
//! - [`evalkit`]: few-shot sampling, top-k metrics, log-linear scaling fits,
//!   exact t-SNE and the published-results registry.
//! - [`synth`]: synthetic labelled clip datasets for end-to-end runs.
//!
//! With the `parallel` feature (on by default) batch-level work runs on rayon;
//! without it every code path runs sequentially. Both paths produce
//! bitwise-identical results.

pub mod evalkit;
pub mod numcore;
pub mod par;
pub mod rng;
pub mod stmae;
pub mod synth;
pub mod trainloop;
pub mod vidpipe;

pub use numcore::{Graph, Tensor, TensorError, Var};
