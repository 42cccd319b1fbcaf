//! Spatiotemporal masked autoencoder.
//!
//! A clip is cut into `p_t × p_h × p_w` boxes ("tokens"), a random subset of
//! tokens is hidden, the encoder sees only the visible ones, and the decoder
//! reconstructs the pixels of the hidden ones. The same encoder, mean-pooled,
//! feeds a linear classification head for finetuning.

mod config;
mod geometry;
mod mask;
mod model;
mod params;
mod posembed;

use thiserror::Error;

pub use config::{ModelConfig, TransformerDims};
pub use geometry::{patchify, unpatchify, PatchGeometry, PatchGrid};
pub use mask::{masked_count, sample_mask, MaskPlan};
pub use model::{normalize_patches, param_count, recon_loss, ParamCount, StMae, LN_EPS, NORM_PIX_EPS};
pub use params::{ModelParts, ParamStore};
pub use posembed::pos_embed;

use crate::numcore::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("config: {0}")]
    Config(String),
    #[error("mask ratio out of range: {0} (must be in [0, 1))")]
    MaskRatio(f64),
    #[error("mask plan: {0}")]
    Mask(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
