//! Cutting fixed-length clips out of segments, and composing repeat-augmented
//! batches.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::clip::Clip;
use super::rawclip::RawClip;
use super::resample::{resample_region, Region};
use super::VidError;
use crate::numcore::Tensor;
use crate::rng::{self, stream, Rng};

/// Frame rate clips are subsampled to.
pub const TARGET_FPS: f64 = 3.75;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleParams {
    pub target_fps: f64,
    pub clip_len: usize,
    /// Output height and width (square).
    pub resolution: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            target_fps: TARGET_FPS,
            clip_len: 16,
            resolution: 224,
        }
    }
}

/// Seconds of video covered by one clip.
pub fn clip_span_seconds(clip_len: usize, target_fps: f64) -> f64 {
    clip_len as f64 / target_fps
}

/// Integer stride nearest to `native_fps / target_fps`.
pub fn subsample_stride(native_fps: f64, target_fps: f64) -> Result<usize, VidError> {
    if !(target_fps > 0.0 && native_fps > 0.0) {
        return Err(VidError::InvalidParams("frame rates must be positive".into()));
    }
    let stride = (native_fps / target_fps).round();
    if stride < 1.0 {
        return Err(VidError::InvalidParams(format!(
            "native {native_fps} fps is below the target {target_fps} fps (stride < 1)"
        )));
    }
    Ok(stride as usize)
}

/// Number of valid start frames: a clip occupies `clip_len · stride` frames.
pub fn admissible_starts(n_frames: usize, clip_len: usize, stride: usize) -> Result<usize, VidError> {
    let needed = clip_len * stride;
    if clip_len == 0 || n_frames < needed {
        return Err(VidError::TooShort {
            n_frames,
            needed,
            clip_len,
            stride,
        });
    }
    Ok(n_frames - needed + 1)
}

/// Takes `clip_len` frames from `start` at the subsampling stride, then resizes
/// the short side to the target resolution and centre-crops a square.
pub fn sample_clip_at(segment: &RawClip, source: &str, start: usize, params: &SampleParams) -> Result<Clip, VidError> {
    if params.resolution == 0 {
        return Err(VidError::InvalidParams("resolution must be positive".into()));
    }
    let stride = subsample_stride(segment.fps as f64, params.target_fps)?;
    let starts = admissible_starts(segment.t, params.clip_len, stride)?;
    if start >= starts {
        return Err(VidError::InvalidParams(format!("start {start} beyond last admissible {}", starts - 1)));
    }
    let n = segment.frame_len();
    let mut data = Vec::with_capacity(params.clip_len * n);
    for i in 0..params.clip_len {
        data.extend(segment.frame(start + i * stride).iter().map(|&p| p as f64 / 255.0));
    }
    let frames = Tensor::new([params.clip_len, segment.c, segment.h, segment.w], data).expect("extents");
    let side = segment.h.min(segment.w);
    let region = Region {
        top: ((segment.h - side) / 2) as f64,
        left: ((segment.w - side) / 2) as f64,
        height: side as f64,
        width: side as f64,
    };
    let frames = resample_region(&frames, region, params.resolution, params.resolution);
    Ok(Clip::new(frames, source, start, segment.fps as f64 / stride as f64))
}

/// [`sample_clip_at`] from a uniformly random admissible start.
pub fn sample_clip(segment: &RawClip, source: &str, rng: &mut Rng, params: &SampleParams) -> Result<Clip, VidError> {
    let stride = subsample_stride(segment.fps as f64, params.target_fps)?;
    let starts = admissible_starts(segment.t, params.clip_len, stride)?;
    let start = rng.random_range(0..starts);
    sample_clip_at(segment, source, start, params)
}

/// One batch slot: a manifest entry plus the seed of its private sampling
/// substream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub entry: usize,
    pub seed: u64,
}

fn check_batch(batch_size: usize, repeat_factor: usize) -> Result<usize, VidError> {
    if repeat_factor == 0 || batch_size == 0 || !batch_size.is_multiple_of(repeat_factor) {
        return Err(VidError::NotDivisible {
            batch: batch_size,
            repeat: repeat_factor,
        });
    }
    Ok(batch_size / repeat_factor)
}

fn expand(distinct: &[usize], repeat_factor: usize, rng: &mut Rng) -> Vec<BatchItem> {
    distinct
        .iter()
        .flat_map(|&entry| std::iter::repeat_n(entry, repeat_factor))
        .map(|entry| BatchItem {
            entry,
            seed: rng.random(),
        })
        .collect()
}

/// Draws `batch_size / repeat_factor` distinct segments and repeats each
/// `repeat_factor` times, every occurrence with its own substream seed.
pub fn repeat_augment_batch(
    n_entries: usize,
    rng: &mut Rng,
    batch_size: usize,
    repeat_factor: usize,
) -> Result<Vec<BatchItem>, VidError> {
    let distinct = check_batch(batch_size, repeat_factor)?;
    if distinct > n_entries {
        return Err(VidError::NotEnoughSegments {
            needed: distinct,
            available: n_entries,
        });
    }
    let chosen = index::sample(rng, n_entries, distinct).into_vec();
    Ok(expand(&chosen, repeat_factor, rng))
}

/// All batches of one epoch: a seeded permutation of the entries cut into
/// groups of `batch_size / repeat_factor` distinct segments. A trailing
/// partial group is dropped. The result depends only on
/// `(seed, epoch, n_entries, batch_size, repeat_factor)`.
pub fn epoch_batches(
    n_entries: usize,
    seed: u64,
    epoch: usize,
    batch_size: usize,
    repeat_factor: usize,
) -> Result<Vec<Vec<BatchItem>>, VidError> {
    let distinct = check_batch(batch_size, repeat_factor)?;
    let mut order: Vec<usize> = (0..n_entries).collect();
    order.shuffle(&mut rng::rng_from(seed, &[stream::SHUFFLE, epoch as u64]));
    Ok(order
        .chunks_exact(distinct)
        .enumerate()
        .map(|(b, group)| {
            let mut r = rng::rng_from(seed, &[stream::BATCH, epoch as u64, b as u64]);
            expand(group, repeat_factor, &mut r)
        })
        .collect())
}
