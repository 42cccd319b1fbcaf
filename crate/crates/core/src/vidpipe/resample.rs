//! Bilinear resampling of a rectangular source region, applied identically
//! to every frame and channel.

use crate::numcore::Tensor;

/// Source rectangle in pixel units: top-left corner and extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl Region {
    pub fn full(h: usize, w: usize) -> Self {
        Region {
            top: 0.0,
            left: 0.0,
            height: h as f64,
            width: w as f64,
        }
    }
}

fn taps(out: usize, start: f64, extent: f64, limit: usize) -> Vec<(usize, usize, f64)> {
    let scale = extent / out as f64;
    (0..out)
        .map(|i| {
            let src = (start + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, (limit - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(limit - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Resamples `region` of a `T × C × H × W` tensor to `out_h × out_w` using
/// half-pixel-centred bilinear interpolation. The full region at the same
/// size is an exact identity.
pub fn resample_region(frames: &Tensor, region: Region, out_h: usize, out_w: usize) -> Tensor {
    let s = frames.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ys = taps(out_h, region.top, region.height, h);
    let xs = taps(out_w, region.left, region.width, w);
    let src = frames.data();
    let mut out = Vec::with_capacity(t * c * out_h * out_w);
    for plane in src.chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(if fy == 0.0 { top } else { top * (1.0 - fy) + bottom * fy });
            }
        }
    }
    Tensor::new([t, c, out_h, out_w], out).expect("extents are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_region_same_size_is_identity() {
        let x = Tensor::from_fn([2, 3, 5, 7], |i| (i as f64 * 0.13).sin());
        assert_eq!(resample_region(&x, Region::full(5, 7), 5, 7), x);
    }

    #[test]
    fn constant_planes_stay_constant() {
        let x = Tensor::full([1, 1, 6, 6], 0.25);
        let y = resample_region(&x, Region { top: 1.0, left: 0.5, height: 3.0, width: 4.0 }, 9, 4);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
