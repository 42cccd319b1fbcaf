use super::geometry::PatchGeometry;
use super::ModelError;
use crate::numcore::Tensor;

/// Fixed separable sinusoidal table: half the channels encode the temporal
/// token index, a quarter each the row and column index.
///
/// Within each part, channel `2j` is `sin(pos · ω_j)` and `2j+1` is
/// `cos(pos · ω_j)` with `ω_j = 10000^(-2j / part_dim)`. Channel 0 of every
/// part is `sin(pos)`, which is injective on integers, so distinct grid
/// positions always get distinct rows.
pub fn pos_embed(geometry: &PatchGeometry, dim: usize) -> Result<Tensor, ModelError> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(ModelError::Config(format!(
            "positional embedding dim {dim} must be a positive multiple of 4"
        )));
    }
    let (nt, nh, nw) = geometry.grid();
    let parts = [dim / 2, dim / 4, dim / 4];
    let mut out = Vec::with_capacity(geometry.num_tokens() * dim);
    for t in 0..nt {
        for h in 0..nh {
            for w in 0..nw {
                for (pos, width) in [t, h, w].into_iter().zip(parts) {
                    for c in 0..width {
                        let j = (c / 2) as f64;
                        let omega = 10000f64.powf(-2.0 * j / width as f64);
                        let arg = pos as f64 * omega;
                        out.push(if c % 2 == 0 { arg.sin() } else { arg.cos() });
                    }
                }
            }
        }
    }
    Ok(Tensor::new([geometry.num_tokens(), dim], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_rows_distinct() {
        for (geom, dim) in [
            (PatchGeometry::new((8, 8, 8, 1), (2, 2, 2)).unwrap(), 4),
            (PatchGeometry::new((16, 32, 32, 3), (2, 4, 4)).unwrap(), 64),
            (PatchGeometry::new((6, 10, 4, 1), (1, 2, 1)).unwrap(), 12),
        ] {
            let a = pos_embed(&geom, dim).unwrap();
            assert_eq!(a, pos_embed(&geom, dim).unwrap());
            let n = geom.num_tokens();
            for i in 0..n {
                for j in i + 1..n {
                    assert_ne!(a.row(i), a.row(j), "rows {i} and {j}");
                }
            }
        }
    }

    #[test]
    fn single_token_grid() {
        let g = PatchGeometry::new((2, 2, 2, 1), (2, 2, 2)).unwrap();
        let t = pos_embed(&g, 8).unwrap();
        assert_eq!(t.shape(), &[1, 8]);
        assert!(t.is_finite());
    }

    #[test]
    fn rejects_bad_dim() {
        let g = PatchGeometry::new((2, 2, 2, 1), (1, 1, 1)).unwrap();
        assert!(pos_embed(&g, 6).is_err());
    }
}
