use std::path::Path;

use super::engine::{self, fingerprint, LoopOptions, Task, TrainState};
use super::record::RunRecord;
use super::TrainError;
use crate::numcore::Tensor;
use crate::rng::{rng_from, stream};
use crate::stmae::{sample_mask, ModelConfig, ModelParts, StMae};
use crate::vidpipe::{epoch_batches, sample_clip, BatchItem, Manifest, RawClip, SampleParams, VidError};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOptions {
    pub model: ModelConfig,
    pub sample: SampleParams,
    pub batch_size: usize,
    pub repeat_factor: usize,
    pub looping: LoopOptions,
}

impl PretrainOptions {
    /// Sampling parameters matched to the model geometry.
    pub fn new(model: ModelConfig, looping: LoopOptions) -> Self {
        let g = model.geometry;
        PretrainOptions {
            model,
            sample: SampleParams {
                clip_len: g.frames,
                resolution: g.height,
                ..SampleParams::default()
            },
            batch_size: 8,
            repeat_factor: 1,
            looping,
        }
    }

    pub fn config_hash(&self) -> u64 {
        fingerprint(&format!(
            "pretrain;model={:?};sample={:?};batch={};repeat={};{}",
            self.model,
            self.sample,
            self.batch_size,
            self.repeat_factor,
            self.looping.canonical()
        ))
    }

    fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let g = self.model.geometry;
        if self.sample.clip_len != g.frames || self.sample.resolution != g.height || g.height != g.width {
            return Err(TrainError::Options(format!(
                "clips of {} frames at {}px do not fit geometry {}x{}x{}",
                self.sample.clip_len, self.sample.resolution, g.frames, g.height, g.width
            )));
        }
        if self.batch_size == 0 || self.repeat_factor == 0 || !self.batch_size.is_multiple_of(self.repeat_factor) {
            return Err(VidError::NotDivisible {
                batch: self.batch_size,
                repeat: self.repeat_factor,
            }
            .into());
        }
        Ok(())
    }
}

/// Decoded segments held in memory, in manifest order.
#[derive(Clone, Debug)]
pub struct PretrainData {
    segments: Vec<(RawClip, String)>,
}

impl PretrainData {
    pub fn from_manifest(manifest: &Manifest) -> Result<Self, TrainError> {
        if manifest.is_empty() {
            return Err(VidError::EmptyManifest.into());
        }
        let segments = manifest
            .entries
            .iter()
            .map(|e| Ok((RawClip::read(&e.path)?, e.source.clone())))
            .collect::<Result<_, VidError>>()?;
        Ok(PretrainData { segments })
    }

    pub fn from_segments(segments: Vec<(RawClip, String)>) -> Result<Self, TrainError> {
        if segments.is_empty() {
            return Err(VidError::EmptyManifest.into());
        }
        Ok(PretrainData { segments })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

struct PretrainTask<'a> {
    data: &'a PretrainData,
    opts: &'a PretrainOptions,
}

impl Task for PretrainTask<'_> {
    type Item = BatchItem;

    fn batches(&self, epoch: usize) -> Result<Vec<Vec<BatchItem>>, TrainError> {
        Ok(epoch_batches(
            self.data.len(),
            self.opts.looping.seed,
            epoch,
            self.opts.batch_size,
            self.opts.repeat_factor,
        )?)
    }

    fn sample(&self, model: &StMae, item: &BatchItem) -> Result<(f64, Vec<Tensor>), TrainError> {
        let (segment, source) = &self.data.segments[item.entry];
        let clip = sample_clip(segment, source, &mut rng_from(item.seed, &[stream::SAMPLE]), &self.opts.sample)?;
        let n = self.opts.model.geometry.num_tokens();
        let plan = sample_mask(n, self.opts.model.mask_ratio, &mut rng_from(item.seed, &[stream::MASK]))?;
        Ok(model.pretrain_step(&clip.frames, &plan)?)
    }
}

fn check_data(data: &PretrainData, opts: &PretrainOptions) -> Result<(), TrainError> {
    let distinct = opts.batch_size / opts.repeat_factor;
    if data.len() < distinct {
        return Err(VidError::NotEnoughSegments {
            needed: distinct,
            available: data.len(),
        }
        .into());
    }
    Ok(())
}

/// Masked-autoencoder pretraining from a fresh initialisation. Writes
/// `stage{i}.ckpt` at each stage boundary and `final.ckpt` (or `init.ckpt`
/// for an empty schedule) under `out_dir`.
pub fn pretrain(opts: &PretrainOptions, data: &PretrainData, out_dir: &Path) -> Result<(RunRecord, TrainState), TrainError> {
    opts.validate()?;
    check_data(data, opts)?;
    let model = StMae::new(opts.model, ModelParts::PRETRAIN, opts.looping.seed)?;
    let mut state = TrainState::fresh(model);
    let hash = opts.config_hash();
    let mut record = RunRecord {
        seed: opts.looping.seed,
        config_hash: hash,
        ..RunRecord::default()
    };
    engine::run(&mut state, &PretrainTask { data, opts }, &opts.looping, hash, out_dir, &mut record)?;
    Ok((record, state))
}

/// Continues a run from one of its checkpoints. The options must hash to the
/// value stored in the checkpoint; `stop_after` may differ.
pub fn resume_pretrain(
    checkpoint: &Path,
    opts: &PretrainOptions,
    data: &PretrainData,
    out_dir: &Path,
) -> Result<(RunRecord, TrainState), TrainError> {
    opts.validate()?;
    check_data(data, opts)?;
    let (mut state, found, seed) = TrainState::load(checkpoint, opts.model, ModelParts::PRETRAIN)?;
    let expected = opts.config_hash();
    if found != expected {
        return Err(TrainError::HashMismatch { expected, found });
    }
    let mut record = RunRecord {
        seed,
        config_hash: found,
        epochs: state.history.clone(),
        ..RunRecord::default()
    };
    engine::run(&mut state, &PretrainTask { data, opts }, &opts.looping, found, out_dir, &mut record)?;
    Ok((record, state))
}
