use std::fmt::Debug;
use std::fs;
use std::path::Path;

use super::record::{EpochLog, RunRecord};
use super::schedule::Schedule;
use super::TrainError;
use crate::numcore::{read_checkpoint, write_checkpoint, AdamW, Checkpoint, OptState, Tensor, TensorError};
use crate::par::{map_indexed, Exec};
use crate::stmae::{ModelConfig, ModelParts, ParamStore, StMae};

/// Options common to pretraining and finetuning.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopOptions {
    pub schedule: Schedule,
    pub seed: u64,
    pub optimizer: AdamW,
    /// Linear warmup over this many optimizer steps; 0 disables it.
    pub warmup_steps: u64,
    pub exec: Exec,
    /// Stop once this many epochs are complete and write a resumable
    /// `partial-e{N}.ckpt`.
    pub stop_after: Option<usize>,
}

impl LoopOptions {
    pub fn new(schedule: Schedule, seed: u64) -> Self {
        LoopOptions {
            schedule,
            seed,
            optimizer: AdamW::default(),
            warmup_steps: 0,
            exec: Exec::default(),
            stop_after: None,
        }
    }

    /// The fields that determine the training trajectory, in a stable form.
    /// `exec` and `stop_after` are excluded: they do not change results.
    pub(crate) fn canonical(&self) -> String {
        format!(
            "schedule={};seed={};adamw={:?};warmup={}",
            self.schedule, self.seed, self.optimizer, self.warmup_steps
        )
    }
}

/// 64-bit FNV-1a.
pub fn fingerprint(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Weights, optimizer moments and progress of one run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: StMae,
    pub opt: Vec<OptState>,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLog>,
}

fn split_u64(x: u64) -> Tensor {
    Tensor::new([2], vec![(x >> 32) as f64, (x & 0xffff_ffff) as f64]).expect("two values")
}

fn join_u64(t: &Tensor) -> Option<u64> {
    let d = t.data();
    (d.len() == 2).then(|| ((d[0] as u64) << 32) | d[1] as u64)
}

fn meta_scalar(ckpt: &Checkpoint, name: &str) -> Result<f64, TrainError> {
    ckpt.get(name)
        .and_then(|t| t.item().ok())
        .ok_or_else(|| TrainError::Checkpoint(format!("missing {name}")))
}

impl TrainState {
    pub fn fresh(model: StMae) -> Self {
        let opt = model.params.tensors().iter().map(OptState::new).collect();
        TrainState {
            model,
            opt,
            step: 0,
            epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn to_checkpoint(&self, config_hash: u64, seed: u64) -> Checkpoint {
        let mut c = Checkpoint::new();
        self.model.params.write_into(&mut c, "model/");
        for (name, s) in self.model.params.names().iter().zip(&self.opt) {
            c.insert(format!("opt.m/{name}"), s.m.clone());
            c.insert(format!("opt.v/{name}"), s.v.clone());
        }
        c.insert("meta/hash", split_u64(config_hash));
        c.insert("meta/seed", split_u64(seed));
        c.insert("meta/step", split_u64(self.step));
        c.insert("meta/epoch", Tensor::scalar(self.epoch as f64));
        if !self.history.is_empty() {
            let n = self.history.len();
            c.insert("meta/loss", Tensor::new([n], self.history.iter().map(|e| e.loss).collect()).expect("n > 0"));
            c.insert("meta/lr", Tensor::new([n], self.history.iter().map(|e| e.lr).collect()).expect("n > 0"));
        }
        c
    }

    /// Restores a state written by [`TrainState::to_checkpoint`]; returns it
    /// with the stored config hash and seed.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: ModelConfig, parts: ModelParts) -> Result<(Self, u64, u64), TrainError> {
        let mut params = ParamStore::init(&config, parts, 0)?;
        params.load_all(ckpt, "model/")?;
        let mut opt = Vec::with_capacity(params.len());
        for (name, t) in params.names().iter().zip(params.tensors()) {
            let get = |kind: &str| {
                ckpt.get(&format!("{kind}/{name}"))
                    .filter(|m| m.shape() == t.shape())
                    .cloned()
                    .ok_or_else(|| TrainError::Checkpoint(format!("missing or misshapen {kind}/{name}")))
            };
            opt.push(OptState { m: get("opt.m")?, v: get("opt.v")?, t: 0 });
        }
        let u64_meta = |name: &str| {
            ckpt.get(name)
                .and_then(join_u64)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing {name}")))
        };
        let hash = u64_meta("meta/hash")?;
        let seed = u64_meta("meta/seed")?;
        let step = u64_meta("meta/step")?;
        opt.iter_mut().for_each(|s| s.t = step);
        let epoch = meta_scalar(ckpt, "meta/epoch")? as usize;
        let history = match (ckpt.get("meta/loss"), ckpt.get("meta/lr")) {
            (Some(l), Some(r)) if l.numel() == epoch && r.numel() == epoch => l
                .data()
                .iter()
                .zip(r.data())
                .enumerate()
                .map(|(i, (&loss, &lr))| EpochLog { epoch: i, lr, loss })
                .collect(),
            (None, None) if epoch == 0 => Vec::new(),
            _ => return Err(TrainError::Checkpoint("loss history does not match the epoch count".into())),
        };
        let model = StMae::from_params(config, params)?;
        Ok((TrainState { model, opt, step, epoch, history }, hash, seed))
    }

    pub fn load(path: &Path, config: ModelConfig, parts: ModelParts) -> Result<(Self, u64, u64), TrainError> {
        let ckpt = read_checkpoint(path).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        TrainState::from_checkpoint(&ckpt, config, parts)
    }

    /// Sums per-sample gradients in order, averages, and takes one AdamW step.
    fn apply(&mut self, grads: Vec<Vec<Tensor>>, optimizer: &AdamW, lr: f64) -> Result<(), TrainError> {
        let n = grads.len() as f64;
        let mut iter = grads.into_iter();
        let mut total = iter.next().ok_or_else(|| TrainError::Options("empty batch".into()))?;
        for g in iter {
            for (t, x) in total.iter_mut().zip(&g) {
                t.data_mut().iter_mut().zip(x.data()).for_each(|(a, b)| *a += b);
            }
        }
        for ((p, g), s) in self.model.params.tensors_mut().iter_mut().zip(&mut total).zip(&mut self.opt) {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
            optimizer.step(p, g, s, lr)?;
        }
        self.step += 1;
        Ok(())
    }
}

/// A training objective over some item type.
pub(crate) trait Task: Sync {
    type Item: Sync + Debug;

    fn batches(&self, epoch: usize) -> Result<Vec<Vec<Self::Item>>, TrainError>;

    /// Loss and gradients (parameter-store order) of one item.
    fn sample(&self, model: &StMae, item: &Self::Item) -> Result<(f64, Vec<Tensor>), TrainError>;

    /// Called after each completed stage.
    fn after_stage(&self, _model: &StMae, _epochs_done: usize, _record: &mut RunRecord) -> Result<(), TrainError> {
        Ok(())
    }
}

fn save(state: &TrainState, out_dir: &Path, name: &str, hash: u64, seed: u64, record: &mut RunRecord) -> Result<(), TrainError> {
    let path = out_dir.join(name);
    write_checkpoint(&path, &state.to_checkpoint(hash, seed))
        .map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
    record.checkpoints.push(name.to_string());
    Ok(())
}

fn dump_batch<I: Debug>(out_dir: &Path, epoch: usize, batch: usize, items: &[I], losses: &[String]) -> Result<std::path::PathBuf, TrainError> {
    let path = out_dir.join(format!("nonfinite-e{epoch}-b{batch}.txt"));
    let text: String = items
        .iter()
        .zip(losses)
        .map(|(i, l)| format!("{i:?}\t{l}\n"))
        .collect();
    fs::write(&path, text).map_err(|e| TrainError::io(&path, e))?;
    Ok(path)
}

/// Runs the remaining epochs of `opts.schedule` from `state.epoch`.
pub(crate) fn run<T: Task>(
    state: &mut TrainState,
    task: &T,
    opts: &LoopOptions,
    hash: u64,
    out_dir: &Path,
    record: &mut RunRecord,
) -> Result<(), TrainError> {
    opts.optimizer.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| TrainError::io(out_dir, e))?;
    let total = opts.schedule.total_epochs();
    let boundaries = opts.schedule.boundaries();
    if total == 0 {
        return save(state, out_dir, "init.ckpt", hash, opts.seed, record);
    }
    if state.epoch >= total {
        return Ok(());
    }
    while state.epoch < total {
        if opts.stop_after == Some(state.epoch) {
            let name = format!("partial-e{}.ckpt", state.epoch);
            return save(state, out_dir, &name, hash, opts.seed, record);
        }
        let epoch = state.epoch;
        let (_, lr) = opts.schedule.stage_at(epoch).expect("epoch < total");
        let batches = task.batches(epoch)?;
        if batches.is_empty() {
            return Err(TrainError::Options("an epoch contains no complete batch".into()));
        }
        let mut loss_sum = 0.0;
        for (b, items) in batches.iter().enumerate() {
            let results = map_indexed(opts.exec, items.len(), |i| task.sample(&state.model, &items[i]));
            let bad = results.iter().any(|r| match r {
                Ok((l, _)) => !l.is_finite(),
                Err(TrainError::Tensor(TensorError::NonFinite { .. })) => true,
                Err(TrainError::Model(crate::stmae::ModelError::Tensor(TensorError::NonFinite { .. }))) => true,
                Err(_) => false,
            });
            if bad {
                let losses: Vec<String> = results
                    .iter()
                    .map(|r| match r {
                        Ok((l, _)) => format!("{l:e}"),
                        Err(e) => e.to_string(),
                    })
                    .collect();
                let dump = dump_batch(out_dir, epoch, b, items, &losses)?;
                return Err(TrainError::NonFinite { epoch, batch: b, dump });
            }
            let mut batch_loss = 0.0;
            let mut grads = Vec::with_capacity(items.len());
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                grads.push(g);
            }
            loss_sum += batch_loss / items.len() as f64;
            let applied = if opts.warmup_steps > 0 {
                lr * ((state.step + 1) as f64 / opts.warmup_steps as f64).min(1.0)
            } else {
                lr
            };
            state.apply(grads, &opts.optimizer, applied)?;
        }
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / batches.len() as f64,
        };
        state.history.push(log);
        record.epochs.push(log);
        state.epoch += 1;
        if let Some(stage) = boundaries.iter().position(|&e| e == state.epoch) {
            save(state, out_dir, &format!("stage{stage}.ckpt"), hash, opts.seed, record)?;
            task.after_stage(&state.model, state.epoch, record)?;
        }
    }
    save(state, out_dir, "final.ckpt", hash, opts.seed, record)
}
