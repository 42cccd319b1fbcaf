use super::ModelError;
use crate::numcore::Tensor;

/// Input clip extents and spatiotemporal patch extents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_t: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchGeometry {
    pub fn new(
        (frames, height, width, channels): (usize, usize, usize, usize),
        (patch_t, patch_h, patch_w): (usize, usize, usize),
    ) -> Result<Self, ModelError> {
        let g = PatchGeometry {
            frames,
            height,
            width,
            channels,
            patch_t,
            patch_h,
            patch_w,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.frames,
            self.height,
            self.width,
            self.channels,
            self.patch_t,
            self.patch_h,
            self.patch_w,
        ];
        if all.contains(&0) {
            return Err(ModelError::Geometry("all extents must be positive".into()));
        }
        for (axis, n, p) in [
            ("frames", self.frames, self.patch_t),
            ("height", self.height, self.patch_h),
            ("width", self.width, self.patch_w),
        ] {
            if n % p != 0 {
                return Err(ModelError::Geometry(format!("{axis} {n} is not divisible by patch extent {p}")));
            }
        }
        Ok(())
    }

    /// Token grid `(n_t, n_h, n_w)`.
    pub fn grid(&self) -> (usize, usize, usize) {
        (
            self.frames / self.patch_t,
            self.height / self.patch_h,
            self.width / self.patch_w,
        )
    }

    pub fn num_tokens(&self) -> usize {
        let (t, h, w) = self.grid();
        t * h * w
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_t * self.patch_h * self.patch_w * self.channels
    }

    /// Token index of grid position `(t, h, w)`.
    pub fn token_index(&self, t: usize, h: usize, w: usize) -> usize {
        let (_, nh, nw) = self.grid();
        (t * nh + h) * nw + w
    }
}

/// `N × patch_dim` patch rows in `(t, h, w)` token order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub geometry: PatchGeometry,
    pub patches: Tensor,
}

fn check_clip(frames: &Tensor, g: &PatchGeometry) -> Result<(), ModelError> {
    let want = [g.frames, g.channels, g.height, g.width];
    if frames.shape() != want {
        return Err(ModelError::Geometry(format!(
            "clip shape {:?} does not match geometry {want:?}",
            frames.shape()
        )));
    }
    Ok(())
}

/// Visits every (token, within-patch offset, clip offset) triple. Within a
/// patch values are ordered `(dt, dh, dw, c)`.
fn for_each_patch_value(g: &PatchGeometry, mut f: impl FnMut(usize, usize)) {
    let (nt, nh, nw) = g.grid();
    let (c, h, w) = (g.channels, g.height, g.width);
    let mut row = 0;
    for it in 0..nt {
        for ih in 0..nh {
            for iw in 0..nw {
                for dt in 0..g.patch_t {
                    for dh in 0..g.patch_h {
                        for dw in 0..g.patch_w {
                            for ch in 0..c {
                                let (t, y, x) = (it * g.patch_t + dt, ih * g.patch_h + dh, iw * g.patch_w + dw);
                                f(row, ((t * c + ch) * h + y) * w + x);
                                row += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Flattens a `T × C × H × W` clip into patch rows.
pub fn patchify(frames: &Tensor, geometry: &PatchGeometry) -> Result<PatchGrid, ModelError> {
    geometry.validate()?;
    check_clip(frames, geometry)?;
    let src = frames.data();
    let mut out = vec![0.0; src.len()];
    for_each_patch_value(geometry, |flat, clip_idx| out[flat] = src[clip_idx]);
    Ok(PatchGrid {
        geometry: *geometry,
        patches: Tensor::new([geometry.num_tokens(), geometry.patch_dim()], out)?,
    })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, geometry: &PatchGeometry) -> Result<Tensor, ModelError> {
    geometry.validate()?;
    if patches.shape() != [geometry.num_tokens(), geometry.patch_dim()] {
        return Err(ModelError::Geometry(format!(
            "grid shape {:?} does not match {} tokens × {} values",
            patches.shape(),
            geometry.num_tokens(),
            geometry.patch_dim()
        )));
    }
    let src = patches.data();
    let mut out = vec![0.0; src.len()];
    for_each_patch_value(geometry, |flat, clip_idx| out[clip_idx] = src[flat]);
    Ok(Tensor::new(
        [geometry.frames, geometry.channels, geometry.height, geometry.width],
        out,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let g224 = PatchGeometry::new((16, 224, 224, 3), (2, 14, 14)).unwrap();
        assert_eq!(g224.grid(), (8, 16, 16));
        assert_eq!(g224.num_tokens(), 2048);
        assert_eq!(g224.patch_dim(), 1176);
        let g448 = PatchGeometry::new((16, 448, 448, 3), (2, 14, 14)).unwrap();
        assert_eq!(g448.grid(), (8, 32, 32));
        assert_eq!(g448.num_tokens(), 8192);
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(PatchGeometry::new((15, 224, 224, 3), (2, 14, 14)).is_err());
        assert!(PatchGeometry::new((16, 225, 224, 3), (2, 14, 14)).is_err());
    }

    #[test]
    fn single_patch_geometry_flattens_channel_last() {
        let g = PatchGeometry::new((2, 2, 2, 1), (2, 2, 2)).unwrap();
        let clip = Tensor::from_fn([2, 1, 2, 2], |i| i as f64);
        let grid = patchify(&clip, &g).unwrap();
        assert_eq!(grid.patches.shape(), &[1, 8]);
        assert_eq!(grid.patches.data(), clip.data());
    }

    #[test]
    fn ones_round_trip() {
        let g = PatchGeometry::new((4, 4, 6, 3), (2, 2, 3)).unwrap();
        let back = unpatchify(&Tensor::ones([g.num_tokens(), g.patch_dim()]), &g).unwrap();
        assert_eq!(back, Tensor::ones([4, 3, 4, 6]));
    }

    #[test]
    fn rows_follow_t_then_h_then_w() {
        let g = PatchGeometry::new((2, 2, 4, 1), (1, 1, 2)).unwrap();
        let clip = Tensor::from_fn([2, 1, 2, 4], |i| i as f64);
        let grid = patchify(&clip, &g).unwrap();
        assert_eq!(grid.patches.row(0), &[0.0, 1.0]);
        assert_eq!(grid.patches.row(1), &[2.0, 3.0]);
        assert_eq!(grid.patches.row(2), &[4.0, 5.0]);
        assert_eq!(grid.patches.row(4), &[8.0, 9.0]);
    }
}
