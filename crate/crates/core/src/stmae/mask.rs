use rand::seq::index;

use super::ModelError;
use crate::rng::Rng;

/// Disjoint sorted index sets of hidden and visible tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub num_tokens: usize,
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

/// `floor(ratio · n)`. A relative slack of 1e-9 absorbs products such as
/// `0.29 · 100 = 28.999…` that are integral in exact arithmetic.
pub fn masked_count(n: usize, ratio: f64) -> Result<usize, ModelError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(ModelError::MaskRatio(ratio));
    }
    let x = ratio * n as f64;
    Ok((x + 1e-9 * x.max(1.0)).floor() as usize)
}

impl MaskPlan {
    /// Nothing hidden.
    pub fn none(n: usize) -> Self {
        MaskPlan {
            num_tokens: n,
            masked: Vec::new(),
            visible: (0..n).collect(),
        }
    }

    pub fn from_masked(n: usize, mut masked: Vec<usize>) -> Result<Self, ModelError> {
        masked.sort_unstable();
        masked.dedup();
        if masked.last().is_some_and(|&m| m >= n) {
            return Err(ModelError::Mask(format!("index out of range for {n} tokens")));
        }
        let mut hidden = vec![false; n];
        masked.iter().for_each(|&i| hidden[i] = true);
        let visible = (0..n).filter(|&i| !hidden[i]).collect();
        Ok(MaskPlan {
            num_tokens: n,
            masked,
            visible,
        })
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.binary_search(&i).is_ok()
    }
}

/// Uniformly random subset of exactly `floor(ratio · n)` tokens, unstructured
/// over the whole spatiotemporal grid.
pub fn sample_mask(n: usize, ratio: f64, rng: &mut Rng) -> Result<MaskPlan, ModelError> {
    if n == 0 {
        return Err(ModelError::Mask("token count must be positive".into()));
    }
    let m = masked_count(n, ratio)?;
    if m == n {
        return Err(ModelError::Mask(format!("ratio {ratio} would hide all {n} tokens")));
    }
    let masked = index::sample(rng, n, m).into_vec();
    MaskPlan::from_masked(n, masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn floor_rule_counts() {
        assert_eq!(masked_count(2048, 0.9).unwrap(), 1843);
        assert_eq!(masked_count(8192, 0.95).unwrap(), 7782);
        assert_eq!(masked_count(512, 0.9).unwrap(), 460);
        assert_eq!(masked_count(100, 0.29).unwrap(), 29);
        assert_eq!(masked_count(10, 0.0).unwrap(), 0);
        assert!(matches!(masked_count(10, 1.0), Err(ModelError::MaskRatio(_))));
        assert!(masked_count(10, -0.1).is_err());
        assert!(masked_count(10, 1.2).is_err());
    }

    #[test]
    fn plans_partition_the_tokens() {
        let mut rng = Rng::seed_from_u64(11);
        let p = sample_mask(2048, 0.9, &mut rng).unwrap();
        assert_eq!(p.masked.len(), 1843);
        assert_eq!(p.visible.len(), 205);
        let mut all: Vec<usize> = p.masked.iter().chain(&p.visible).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..2048).collect::<Vec<_>>());
        assert!(p.masked.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_ratio_keeps_everything_visible() {
        let p = sample_mask(7, 0.0, &mut Rng::seed_from_u64(0)).unwrap();
        assert!(p.masked.is_empty());
        assert_eq!(p.visible.len(), 7);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_mask(100, 0.5, &mut Rng::seed_from_u64(5)).unwrap();
        let b = sample_mask(100, 0.5, &mut Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
