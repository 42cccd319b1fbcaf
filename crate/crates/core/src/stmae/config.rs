use super::geometry::PatchGeometry;
use super::mask::masked_count;
use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerDims {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub geometry: PatchGeometry,
    pub encoder: TransformerDims,
    pub decoder: TransformerDims,
    /// Hidden width of each MLP as a multiple of the model width.
    pub mlp_ratio: usize,
    pub mask_ratio: f64,
    /// Standardise each target patch before the reconstruction loss.
    pub norm_pix: bool,
    /// Set for finetuning/classification.
    pub n_classes: Option<usize>,
}

impl ModelConfig {
    /// Runs in seconds on a laptop CPU: 16×32×32 RGB clips with 2×4×4
    /// patches (512 tokens).
    pub fn desk() -> Self {
        ModelConfig {
            geometry: PatchGeometry {
                frames: 16,
                height: 32,
                width: 32,
                channels: 3,
                patch_t: 2,
                patch_h: 4,
                patch_w: 4,
            },
            encoder: TransformerDims {
                dim: 64,
                depth: 4,
                heads: 4,
            },
            decoder: TransformerDims {
                dim: 32,
                depth: 2,
                heads: 4,
            },
            mlp_ratio: 4,
            mask_ratio: 0.9,
            norm_pix: true,
            n_classes: None,
        }
    }

    /// ViT-H/14 encoder over 16×224×224 clips with 2×14×14 patches. The
    /// decoder geometry is the usual video-MAE choice (512 wide, 4 deep).
    pub fn vit_h_224() -> Self {
        ModelConfig {
            geometry: PatchGeometry {
                frames: 16,
                height: 224,
                width: 224,
                channels: 3,
                patch_t: 2,
                patch_h: 14,
                patch_w: 14,
            },
            encoder: TransformerDims {
                dim: 1280,
                depth: 32,
                heads: 16,
            },
            decoder: TransformerDims {
                dim: 512,
                depth: 4,
                heads: 16,
            },
            mlp_ratio: 4,
            mask_ratio: 0.9,
            norm_pix: true,
            n_classes: None,
        }
    }

    /// The 448×448 variant: 8192 tokens, 95% masking.
    pub fn vit_h_448() -> Self {
        let mut c = ModelConfig::vit_h_224();
        c.geometry.height = 448;
        c.geometry.width = 448;
        c.mask_ratio = 0.95;
        c
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.n_classes = Some(n);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.geometry.validate()?;
        masked_count(self.geometry.num_tokens(), self.mask_ratio)?;
        if masked_count(self.geometry.num_tokens(), self.mask_ratio)? == self.geometry.num_tokens() {
            return Err(ModelError::MaskRatio(self.mask_ratio));
        }
        for (name, d) in [("encoder", self.encoder), ("decoder", self.decoder)] {
            if d.dim == 0 || d.heads == 0 || d.dim % d.heads != 0 {
                return Err(ModelError::Config(format!(
                    "{name} dim {} must be a positive multiple of heads {}",
                    d.dim, d.heads
                )));
            }
            if d.dim % 4 != 0 {
                return Err(ModelError::Config(format!("{name} dim {} must be a multiple of 4", d.dim)));
            }
        }
        if self.mlp_ratio == 0 {
            return Err(ModelError::Config("mlp_ratio must be positive".into()));
        }
        if self.n_classes == Some(0) {
            return Err(ModelError::Config("n_classes must be positive".into()));
        }
        Ok(())
    }
}
