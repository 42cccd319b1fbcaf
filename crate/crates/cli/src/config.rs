//! Run configuration: a TOML document with one table per module. Every field
//! has a default, unknown keys are rejected, and the hash is taken over the
//! canonical re-serialisation, so key order in the input does not matter.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hvm_core::numcore::AdamW;
use hvm_core::stmae::{ModelConfig, PatchGeometry, TransformerDims};
use hvm_core::trainloop::Schedule;
use hvm_core::vidpipe::{AugmentParams, SampleParams, DEFAULT_BLANK_THRESHOLD, TARGET_FPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides `seed` (a `--seed` flag wins over it).
pub const SEED_ENV: &str = "HVM_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub runtime: RuntimeSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub optim: OptimSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub tsne: TsneSection,
    pub scaling: ScalingSection,
    pub report: ReportSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSection {
    /// Worker threads; 0 lets rayon decide. Results are reproducible for a
    /// fixed value.
    pub threads: usize,
    pub parallel: bool,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        RuntimeSection {
            threads: 1,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub patch_t: usize,
    pub patch_s: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: usize,
    pub mask_ratio: f64,
    pub norm_pix: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk();
        let g = d.geometry;
        ModelSection {
            frames: g.frames,
            size: g.height,
            channels: g.channels,
            patch_t: g.patch_t,
            patch_s: g.patch_h,
            enc_dim: d.encoder.dim,
            enc_depth: d.encoder.depth,
            enc_heads: d.encoder.heads,
            dec_dim: d.decoder.dim,
            dec_depth: d.decoder.depth,
            dec_heads: d.decoder.heads,
            mlp_ratio: d.mlp_ratio,
            mask_ratio: d.mask_ratio,
            norm_pix: d.norm_pix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Segment manifest for pretraining.
    pub manifest: String,
    /// Label file for finetuning, evaluation and embedding.
    pub labels: String,
    pub target_fps: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: String::new(),
            labels: String::new(),
            target_fps: TARGET_FPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// Directory of `.hvmclip` segments, or of frame directories when
    /// `frame_dirs` is set.
    pub root: String,
    /// Treat each sub-directory of `root` as one segment of PNG frames.
    pub frame_dirs: bool,
    /// Native frame rate assigned to converted frame directories.
    pub fps: f64,
    pub blank_threshold: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            root: String::new(),
            frame_dirs: false,
            fps: 30.0,
            blank_threshold: DEFAULT_BLANK_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub task: String,
    pub n: usize,
    /// Class count for the static task; ignored by the moving task.
    pub classes: usize,
    pub test_every: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            task: "moving-shape-direction".into(),
            n: 64,
            classes: 4,
            test_every: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let a = AdamW::default();
        OptimSection {
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            warmup_steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// `epochs@lr` stages, comma-separated.
    pub schedule: String,
    pub batch_size: usize,
    pub repeat_factor: usize,
    /// Checkpoint to continue from; empty starts fresh.
    pub resume: String,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            schedule: "20@1e-3".into(),
            batch_size: 8,
            repeat_factor: 1,
            resume: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub schedule: String,
    pub batch_size: usize,
    /// Training examples per class, drawn from the train split.
    pub k: usize,
    /// Pretraining checkpoint; empty trains from scratch.
    pub init: String,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub crop_ratio_min: f64,
    pub crop_ratio_max: f64,
    pub flip_prob: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let a = AugmentParams::for_resolution(1);
        FinetuneSection {
            schedule: "20@1e-3".into(),
            batch_size: 8,
            k: 10,
            init: String::new(),
            crop_scale_min: a.scale.0,
            crop_scale_max: a.scale.1,
            crop_ratio_min: a.ratio.0,
            crop_ratio_max: a.ratio.1,
            flip_prob: a.flip_prob,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Checkpoint to evaluate or embed with.
    pub checkpoint: String,
    /// Classes reported separately by `eval`.
    pub subset_classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneSection {
    /// Embedding CSV written by `embed`.
    pub embeddings: String,
    pub perplexity: f64,
    pub iters: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        TsneSection {
            embeddings: String::new(),
            perplexity: 30.0,
            iters: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    /// Tab-separated `hours accuracy condition` lines.
    pub points: String,
    /// Extra points tested against the fitted trend.
    pub candidates: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Finetune run directories to summarise.
    pub runs: Vec<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_value(toml::from_str(text).context("config is not valid TOML")?)
    }

    fn from_value(v: toml::Table) -> Result<Self> {
        RunConfig::deserialize(v).map_err(|e| anyhow!("invalid config: {}", e.message()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).context("serialising config")?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override {item:?} is not key=value"))?;
            let value = parse_value(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one item");
            let mut cur = &mut table;
            for p in parents {
                cur = cur
                    .get_mut(*p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| anyhow!("invalid config: unknown section `{p}` in override {item:?}"))?;
            }
            if !cur.contains_key(*last) {
                bail!("invalid config: unknown field `{key}`");
            }
            cur.insert(last.to_string(), value);
        }
        Self::from_value(table)
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self, n_classes: Option<usize>) -> Result<ModelConfig> {
        let m = &self.model;
        let geometry = PatchGeometry::new(
            (m.frames, m.size, m.size, m.channels),
            (m.patch_t, m.patch_s, m.patch_s),
        )
        .map_err(|e| anyhow!("model: {e}"))?;
        let cfg = ModelConfig {
            geometry,
            encoder: TransformerDims {
                dim: m.enc_dim,
                depth: m.enc_depth,
                heads: m.enc_heads,
            },
            decoder: TransformerDims {
                dim: m.dec_dim,
                depth: m.dec_depth,
                heads: m.dec_heads,
            },
            mlp_ratio: m.mlp_ratio,
            mask_ratio: m.mask_ratio,
            norm_pix: m.norm_pix,
            n_classes,
        };
        cfg.validate().map_err(|e| anyhow!("model.mask_ratio/model: {e}"))?;
        Ok(cfg)
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            target_fps: self.data.target_fps,
            clip_len: self.model.frames,
            resolution: self.model.size,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
            weight_decay: self.optim.weight_decay,
        }
    }

    pub fn augment(&self) -> AugmentParams {
        let f = &self.finetune;
        AugmentParams {
            scale: (f.crop_scale_min, f.crop_scale_max),
            ratio: (f.crop_ratio_min, f.crop_ratio_max),
            flip_prob: f.flip_prob,
            out_h: self.model.size,
            out_w: self.model.size,
        }
    }

    /// Field-level checks that do not need any files.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            problems.push(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if let Err(e) = self.model_config(None) {
            problems.push(e.to_string());
        }
        for (name, s) in [("pretrain.schedule", &self.pretrain.schedule), ("finetune.schedule", &self.finetune.schedule)] {
            if let Err(e) = s.parse::<Schedule>() {
                problems.push(format!("{name}: {e}"));
            }
        }
        if let Err(e) = self.optimizer().validate() {
            problems.push(format!("optim: {e}"));
        }
        if !(self.data.target_fps > 0.0) {
            problems.push("data.target_fps: must be positive".into());
        }
        let p = &self.pretrain;
        if p.batch_size == 0 || p.repeat_factor == 0 || !p.batch_size.is_multiple_of(p.repeat_factor) {
            problems.push(format!(
                "pretrain.batch_size: {} must be a positive multiple of pretrain.repeat_factor {}",
                p.batch_size, p.repeat_factor
            ));
        }
        let f = &self.finetune;
        if f.batch_size == 0 {
            problems.push("finetune.batch_size: must be positive".into());
        }
        if f.k == 0 {
            problems.push("finetune.k: must be at least 1".into());
        }
        if !(0.0 < f.crop_scale_min && f.crop_scale_min <= f.crop_scale_max && f.crop_scale_max <= 1.0) {
            problems.push("finetune.crop_scale_min/max: need 0 < min <= max <= 1".into());
        }
        if !(0.0 < f.crop_ratio_min && f.crop_ratio_min <= f.crop_ratio_max) {
            problems.push("finetune.crop_ratio_min/max: need 0 < min <= max".into());
        }
        if !(0.0..=1.0).contains(&f.flip_prob) {
            problems.push("finetune.flip_prob: must lie in [0, 1]".into());
        }
        if !(self.tsne.perplexity >= 1.0) || self.tsne.iters == 0 {
            problems.push("tsne.perplexity/iters: perplexity >= 1 and iters > 0 required".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("{}", problems.join("\n"))
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Resolves a config path relative to the working directory.
pub fn path_of(field: &str, value: &str) -> Result<PathBuf> {
    if value.is_empty() {
        bail!("{field} is not set");
    }
    Ok(PathBuf::from(value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.canonical()).unwrap(), c);
    }

    #[test]
    fn key_order_does_not_change_the_hash() {
        let a = RunConfig::from_toml("seed = 3\n[model]\nsize = 16\nframes = 8\n").unwrap();
        let b = RunConfig::from_toml("[model]\nframes = 8\nsize = 16\n[runtime]\n").unwrap();
        let b = RunConfig { seed: 3, ..b };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[model]\nwidth = 3\n").unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::default().with_overrides(&["model.nope=1".into()]).is_err());
        assert!(RunConfig::default().with_overrides(&["nosection.x=1".into()]).is_err());
    }

    #[test]
    fn overrides_parse_typed_values() {
        let c = RunConfig::default()
            .with_overrides(&[
                "model.mask_ratio=0.75".into(),
                "pretrain.schedule=3@1e-3".into(),
                "eval.subset_classes=[0, 2]".into(),
            ])
            .unwrap();
        assert_eq!(c.model.mask_ratio, 0.75);
        assert_eq!(c.pretrain.schedule, "3@1e-3");
        assert_eq!(c.eval.subset_classes, vec![0, 2]);
        assert!(RunConfig::default().with_overrides(&["model.size=abc".into()]).is_err());
    }

    #[test]
    fn bad_mask_ratio_is_reported() {
        let c = RunConfig::default().with_overrides(&["model.mask_ratio=1.2".into()]).unwrap();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("mask ratio out of range"), "{msg}");
    }
}
