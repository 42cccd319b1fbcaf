//! Video segments on disk, manifests, clip sampling and augmentation.
//!
//! Segments are stored as [`RawClip`] files (`*.hvmclip`): a fixed header and
//! raw `u8` pixels. A [`Manifest`] lists segments with their frame counts and
//! native frame rates. Training clips are cut from segments at a fixed target
//! frame rate by integer striding.

mod augment;
mod clip;
mod manifest;
mod rawclip;
mod resample;
mod sampling;

use std::path::PathBuf;

use thiserror::Error;

pub use augment::{augment_finetune, hflip, image_to_clip, AugmentParams, CropBox};
pub use clip::Clip;
pub use manifest::{
    build_manifest, classify_segment, detect_blank, manifest_stats, Manifest, ManifestEntry,
    ManifestScan, ManifestStats, SegmentStatus, DEFAULT_BLANK_THRESHOLD,
};
pub use rawclip::{RawClip, RAWCLIP_EXTENSION, RAWCLIP_MAGIC};
pub use resample::{resample_region, Region};
pub use sampling::{
    admissible_starts, clip_span_seconds, epoch_batches, repeat_augment_batch, sample_clip,
    sample_clip_at, subsample_stride, BatchItem, SampleParams, TARGET_FPS,
};

#[derive(Debug, Error)]
pub enum VidError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupted clip file: {0}")]
    Corrupted(String),
    #[error("no readable clip segments under {0}")]
    EmptyRoot(PathBuf),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("malformed manifest line {line}: {detail}")]
    ManifestParse { line: usize, detail: String },
    #[error("segment too short: {n_frames} frames, need {needed} (clip_len {clip_len} × stride {stride})")]
    TooShort {
        n_frames: usize,
        needed: usize,
        clip_len: usize,
        stride: usize,
    },
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("batch size {batch} is not divisible by repeat factor {repeat}")]
    NotDivisible { batch: usize, repeat: usize },
    #[error("need {needed} distinct segments for a batch, manifest has {available}")]
    NotEnoughSegments { needed: usize, available: usize },
}

impl VidError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VidError::Io {
            path: path.into(),
            source,
        }
    }
}
