use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::engine::{self, fingerprint, LoopOptions, Task, TrainState};
use super::record::{EvalPoint, RunRecord};
use super::TrainError;
use crate::evalkit::topk_accuracy;
use crate::numcore::{Checkpoint, Tensor};
use crate::par::{map_indexed, Exec};
use crate::rng::{rng_from, stream};
use crate::stmae::{ModelConfig, ModelParts, ParamStore, StMae};
use crate::synth::LabelEntry;
use crate::vidpipe::{admissible_starts, augment_finetune, sample_clip, sample_clip_at, subsample_stride, AugmentParams, RawClip, SampleParams};

/// Labelled segments held in memory.
#[derive(Clone, Debug)]
pub struct FinetuneData {
    pub clips: Vec<RawClip>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl FinetuneData {
    pub fn new(clips: Vec<RawClip>, labels: Vec<usize>, n_classes: usize) -> Result<Self, TrainError> {
        if clips.len() != labels.len() {
            return Err(TrainError::Options(format!("{} clips, {} labels", clips.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(TrainError::ClassMismatch(format!("label {bad} with {n_classes} classes")));
        }
        Ok(FinetuneData { clips, labels, n_classes })
    }

    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a LabelEntry>, n_classes: usize) -> Result<Self, TrainError> {
        let (mut clips, mut labels) = (Vec::new(), Vec::new());
        for e in entries {
            clips.push(RawClip::read(&e.path)?);
            labels.push(e.label);
        }
        FinetuneData::new(clips, labels, n_classes)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        FinetuneData {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum FinetuneInit<'a> {
    /// Fresh random weights: the baseline trained on the downstream task only.
    Scratch,
    /// Encoder weights from a pretraining checkpoint; the head starts fresh.
    Pretrained(&'a Checkpoint),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOptions {
    /// Must carry `n_classes`.
    pub model: ModelConfig,
    pub sample: SampleParams,
    pub augment: AugmentParams,
    pub batch_size: usize,
    pub looping: LoopOptions,
}

impl FinetuneOptions {
    pub fn new(model: ModelConfig, looping: LoopOptions) -> Self {
        let g = model.geometry;
        FinetuneOptions {
            model,
            sample: SampleParams {
                clip_len: g.frames,
                resolution: g.height,
                ..SampleParams::default()
            },
            augment: AugmentParams::for_resolution(g.height),
            batch_size: 8,
            looping,
        }
    }

    pub fn config_hash(&self, init: &FinetuneInit) -> u64 {
        let init = match init {
            FinetuneInit::Scratch => "scratch",
            FinetuneInit::Pretrained(_) => "pretrained",
        };
        fingerprint(&format!(
            "finetune;init={init};model={:?};sample={:?};augment={:?};batch={};{}",
            self.model,
            self.sample,
            self.augment,
            self.batch_size,
            self.looping.canonical()
        ))
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FtItem {
    index: usize,
    seed: u64,
}

struct FinetuneTask<'a> {
    train: &'a FinetuneData,
    eval: Option<&'a FinetuneData>,
    opts: &'a FinetuneOptions,
}

impl Task for FinetuneTask<'_> {
    type Item = FtItem;

    fn batches(&self, epoch: usize) -> Result<Vec<Vec<FtItem>>, TrainError> {
        let seed = self.opts.looping.seed;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_from(seed, &[stream::SHUFFLE, epoch as u64]));
        let size = self.opts.batch_size.min(order.len());
        Ok(order
            .chunks_exact(size)
            .enumerate()
            .map(|(b, chunk)| {
                let mut r = rng_from(seed, &[stream::BATCH, epoch as u64, b as u64]);
                chunk.iter().map(|&index| FtItem { index, seed: r.random() }).collect()
            })
            .collect())
    }

    fn sample(&self, model: &StMae, item: &FtItem) -> Result<(f64, Vec<Tensor>), TrainError> {
        let raw = &self.train.clips[item.index];
        let clip = sample_clip(raw, "", &mut rng_from(item.seed, &[stream::SAMPLE]), &self.opts.sample)?;
        let clip = augment_finetune(&clip, &mut rng_from(item.seed, &[stream::AUGMENT]), &self.opts.augment);
        Ok(model.classify_step(&clip.frames, self.train.labels[item.index])?)
    }

    fn after_stage(&self, model: &StMae, epochs_done: usize, record: &mut RunRecord) -> Result<(), TrainError> {
        if let Some(eval) = self.eval {
            record.evals.extend(evaluate(model, eval, &self.opts.sample, self.opts.looping.exec, epochs_done)?);
        }
        Ok(())
    }
}

/// Logits (`N × n_classes`) from one centre view per clip: the middle
/// admissible start, centre square crop.
pub fn eval_logits(model: &StMae, data: &FinetuneData, sample: &SampleParams, exec: Exec) -> Result<Tensor, TrainError> {
    let rows = map_indexed(exec, data.len(), |i| -> Result<Tensor, TrainError> {
        let raw = &data.clips[i];
        let stride = subsample_stride(raw.fps as f64, sample.target_fps)?;
        let start = (admissible_starts(raw.t, sample.clip_len, stride)? - 1) / 2;
        let clip = sample_clip_at(raw, "", start, sample)?;
        Ok(model.classify(&clip.frames)?)
    });
    let mut out = Vec::with_capacity(data.len() * data.n_classes);
    for r in rows {
        out.extend_from_slice(r?.data());
    }
    Ok(Tensor::new([data.len(), data.n_classes], out)?)
}

fn evaluate(model: &StMae, data: &FinetuneData, sample: &SampleParams, exec: Exec, epoch: usize) -> Result<Vec<EvalPoint>, TrainError> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let logits = eval_logits(model, data, sample, exec)?;
    let mut points = Vec::new();
    for k in [1, 5] {
        if k <= data.n_classes {
            let value = topk_accuracy(&logits, &data.labels, k).map_err(|e| TrainError::Options(e.to_string()))?;
            points.push(EvalPoint {
                epoch,
                metric: format!("top{k}"),
                value,
            });
        }
    }
    Ok(points)
}

fn initial_model(init: &FinetuneInit, config: ModelConfig, seed: u64) -> Result<StMae, TrainError> {
    let mut params = ParamStore::init(&config, ModelParts::CLASSIFY, seed)?;
    if let FinetuneInit::Pretrained(ckpt) = init {
        if let (Some(src), Some(dst)) = (ckpt.get("model/head.w"), params.get("head.w")) {
            if src.shape() != dst.shape() {
                return Err(TrainError::ClassMismatch(format!(
                    "checkpoint head {:?}, model head {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
        }
        let wanted = params.names().iter().filter(|n| n.starts_with("enc.")).count();
        let loaded = params.load_matching(ckpt, "model/", Some("enc."))?;
        if loaded != wanted {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint provides {loaded} of {wanted} encoder tensors"
            )));
        }
    }
    Ok(StMae::from_params(config, params)?)
}

/// Supervised training of encoder and head with cross-entropy. When `eval`
/// is given, top-1 (and top-5 when there are at least five classes) are
/// recorded after every stage.
pub fn finetune(
    init: FinetuneInit,
    train: &FinetuneData,
    eval: Option<&FinetuneData>,
    opts: &FinetuneOptions,
    out_dir: &Path,
) -> Result<(RunRecord, TrainState), TrainError> {
    let classes = opts
        .model
        .n_classes
        .ok_or_else(|| TrainError::ClassMismatch("model config has no n_classes".into()))?;
    for d in std::iter::once(train).chain(eval) {
        if d.n_classes != classes {
            return Err(TrainError::ClassMismatch(format!(
                "data has {} classes, model has {classes}",
                d.n_classes
            )));
        }
    }
    if train.is_empty() {
        return Err(TrainError::Options("no training clips".into()));
    }
    if opts.batch_size == 0 {
        return Err(TrainError::Options("batch size must be positive".into()));
    }
    let model = initial_model(&init, opts.model, opts.looping.seed)?;
    let mut state = TrainState::fresh(model);
    let hash = opts.config_hash(&init);
    let mut record = RunRecord {
        seed: opts.looping.seed,
        config_hash: hash,
        ..RunRecord::default()
    };
    let task = FinetuneTask { train, eval, opts };
    engine::run(&mut state, &task, &opts.looping, hash, out_dir, &mut record)?;
    if opts.looping.schedule.total_epochs() == 0 {
        if let Some(eval) = eval {
            record.evals.extend(evaluate(&state.model, eval, &opts.sample, opts.looping.exec, 0)?);
        }
    }
    Ok((record, state))
}
