//! Pretraining and finetuning loops.
//!
//! Both loops share one engine: an epoch is a list of batches computed as a
//! pure function of `(seed, epoch)`, every sample's loss and gradients are
//! computed independently (in parallel when enabled) and summed in batch
//! order, then AdamW takes one step at the active stage's learning rate.

mod engine;
mod finetune;
mod pretrain;
mod record;
mod schedule;

use std::path::PathBuf;

use thiserror::Error;

use crate::numcore::TensorError;
use crate::stmae::ModelError;
use crate::vidpipe::VidError;

pub use engine::{fingerprint, LoopOptions, TrainState};
pub use finetune::{eval_logits, finetune, FinetuneData, FinetuneInit, FinetuneOptions};
pub use pretrain::{pretrain, resume_pretrain, PretrainData, PretrainOptions};
pub use record::{EpochLog, EvalPoint, RunRecord};
pub use schedule::{Schedule, TrainStage};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid training options: {0}")]
    Options(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; batch written to {}", dump.display())]
    NonFinite { epoch: usize, batch: usize, dump: PathBuf },
    #[error("checkpoint was written under config {found:016x}, current config is {expected:016x}")]
    HashMismatch { expected: u64, found: u64 },
    #[error("class count mismatch: {0}")]
    ClassMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed run record line {line}: {detail}")]
    RecordParse { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Video(#[from] VidError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}
