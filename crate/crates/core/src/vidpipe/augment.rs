//! Finetuning augmentations and image-to-clip adaptation.

use rand::Rng as _;

use super::clip::Clip;
use super::resample::{resample_region, Region};
use crate::numcore::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Range of the crop area as a fraction of the frame area.
    pub scale: (f64, f64),
    /// Range of the crop aspect ratio (width / height), sampled log-uniformly.
    pub ratio: (f64, f64),
    pub flip_prob: f64,
    pub out_h: usize,
    pub out_w: usize,
}

impl AugmentParams {
    pub fn for_resolution(resolution: usize) -> Self {
        AugmentParams {
            scale: (0.2, 1.0),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            out_h: resolution,
            out_w: resolution,
        }
    }
}

/// Integer crop rectangle: `(top, left, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

const CROP_TRIES: usize = 10;

/// Random-resized-crop box: up to ten draws of (area, aspect), falling back
/// to a centre crop with the aspect clamped into range.
pub fn random_resized_crop_box(h: usize, w: usize, params: &AugmentParams, rng: &mut Rng) -> CropBox {
    let area = (h * w) as f64;
    let (lr0, lr1) = (params.ratio.0.ln(), params.ratio.1.ln());
    for _ in 0..CROP_TRIES {
        let target = area * uniform(rng, params.scale.0, params.scale.1);
        let aspect = uniform(rng, lr0, lr1).exp();
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw > 0 && cw <= w && ch > 0 && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return CropBox { top, left, height: ch, width: cw };
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < params.ratio.0 {
        ((w as f64 / params.ratio.0).round() as usize, w)
    } else if in_ratio > params.ratio.1 {
        (h, (h as f64 * params.ratio.1).round() as usize)
    } else {
        (h, w)
    };
    CropBox {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Mirrors every frame left to right.
pub fn hflip(clip: &Clip) -> Clip {
    let (_, _, _, w) = clip.dims();
    let mut data = clip.frames.data().to_vec();
    data.chunks_mut(w).for_each(|row| row.reverse());
    Clip {
        frames: Tensor::new(clip.frames.shape().to_vec(), data).expect("same shape"),
        ..clip.clone()
    }
}

/// One random resized crop and an independent horizontal flip, shared by
/// every frame of the clip.
pub fn augment_finetune(clip: &Clip, rng: &mut Rng, params: &AugmentParams) -> Clip {
    let (_, _, h, w) = clip.dims();
    let b = random_resized_crop_box(h, w, params, rng);
    let flip = rng.random::<f64>() < params.flip_prob;
    let region = Region {
        top: b.top as f64,
        left: b.left as f64,
        height: b.height as f64,
        width: b.width as f64,
    };
    let out = Clip {
        frames: resample_region(&clip.frames, region, params.out_h, params.out_w),
        ..clip.clone()
    };
    if flip {
        hflip(&out)
    } else {
        out
    }
}

/// Repeats a single `C × H × W` image `clip_len` times.
pub fn image_to_clip(image: &Tensor, clip_len: usize) -> Clip {
    assert_eq!(image.rank(), 3, "image must be C x H x W");
    let s = image.shape();
    let mut data = Vec::with_capacity(clip_len * image.numel());
    for _ in 0..clip_len {
        data.extend_from_slice(image.data());
    }
    let frames = Tensor::new([clip_len, s[0], s[1], s[2]], data).expect("extents");
    Clip::new(frames, "image", 0, super::sampling::TARGET_FPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn clip() -> Clip {
        let frames = Tensor::from_fn([4, 3, 8, 8], |i| ((i * 31) % 97) as f64 / 96.0);
        Clip::new(frames, "c", 0, 3.75)
    }

    #[test]
    fn flip_is_an_involution() {
        let c = clip();
        assert_ne!(hflip(&c), c);
        assert_eq!(hflip(&hflip(&c)), c);
    }

    #[test]
    fn full_scale_without_flip_is_identity() {
        let c = clip();
        let p = AugmentParams {
            scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            flip_prob: 0.0,
            ..AugmentParams::for_resolution(8)
        };
        let mut rng = Rng::seed_from_u64(9);
        assert_eq!(augment_finetune(&c, &mut rng, &p), c);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let c = clip();
        let p = AugmentParams::for_resolution(8);
        let a = augment_finetune(&c, &mut Rng::seed_from_u64(4), &p);
        let b = augment_finetune(&c, &mut Rng::seed_from_u64(4), &p);
        assert_eq!(a, b);
        assert_eq!(a.dims(), (4, 3, 8, 8));
    }

    #[test]
    fn crop_boxes_stay_in_bounds() {
        let p = AugmentParams::for_resolution(8);
        let mut rng = Rng::seed_from_u64(0);
        for _ in 0..500 {
            let b = random_resized_crop_box(20, 30, &p, &mut rng);
            assert!(b.height >= 1 && b.width >= 1);
            assert!(b.top + b.height <= 20 && b.left + b.width <= 30);
        }
    }

    #[test]
    fn image_clip_has_identical_frames() {
        let img = Tensor::from_fn([3, 4, 4], |i| i as f64 / 48.0);
        let c = image_to_clip(&img, 16);
        assert_eq!(c.dims(), (16, 3, 4, 4));
        for t in 1..16 {
            assert_eq!(c.frame(t), c.frame(0));
        }
    }
}
