use crate::numcore::Tensor;

/// A `T × C × H × W` block of pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Tensor,
    pub source: String,
    /// Index of the first sampled frame in the source segment.
    pub start: usize,
    /// Frame rate after subsampling.
    pub fps: f64,
}

impl Clip {
    pub fn new(frames: Tensor, source: impl Into<String>, start: usize, fps: f64) -> Self {
        debug_assert_eq!(frames.rank(), 4);
        Clip {
            frames,
            source: source.into(),
            start,
            fps,
        }
    }

    /// `(T, C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.frames.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let (_, c, h, w) = self.dims();
        let n = c * h * w;
        &self.frames.data()[t * n..(t + 1) * n]
    }

    pub fn duration_s(&self) -> f64 {
        self.dims().0 as f64 / self.fps
    }
}
