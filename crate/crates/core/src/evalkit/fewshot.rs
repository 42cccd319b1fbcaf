use rand::seq::index;

use super::EvalError;
use crate::rng::{rng_from, stream};

/// `k` examples from each listed class, drawn with `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSpec {
    pub k: usize,
    pub classes: Vec<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KShotSample {
    /// Dataset indices, grouped by class in `classes` order, ascending within
    /// a class.
    pub indices: Vec<usize>,
    /// Classes that had fewer examples than requested, with their size. Such
    /// classes contribute everything they have.
    pub short: Vec<(usize, usize)>,
}

impl KShotSample {
    pub fn warnings(&self) -> Vec<String> {
        self.short
            .iter()
            .map(|(c, n)| format!("class {c} has only {n} examples; using all of them"))
            .collect()
    }
}

fn by_class(labels: &[usize], class: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l == class)
        .map(|(i, _)| i)
        .collect()
}

fn stratified(labels: &[usize], classes: &[usize], seed: u64, want: impl Fn(usize) -> usize) -> Result<KShotSample, EvalError> {
    let mut out = KShotSample {
        indices: Vec::new(),
        short: Vec::new(),
    };
    for &c in classes {
        let members = by_class(labels, c);
        if members.is_empty() {
            return Err(EvalError::EmptyClass(c));
        }
        let k = want(members.len());
        if k > members.len() {
            out.short.push((c, members.len()));
        }
        let take = k.min(members.len());
        let mut rng = rng_from(seed, &[stream::KSHOT, c as u64]);
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), take)
            .into_iter()
            .map(|j| members[j])
            .collect();
        picked.sort_unstable();
        out.indices.extend(picked);
    }
    Ok(out)
}

/// Stratified sampling without replacement: `spec.k` examples per class.
/// Each class draws from its own substream, so adding a class does not change
/// the others.
pub fn sample_kshot(labels: &[usize], spec: &FewShotSpec) -> Result<KShotSample, EvalError> {
    if spec.k == 0 {
        return Err(EvalError::Invalid("k must be at least 1".into()));
    }
    stratified(labels, &spec.classes, spec.seed, |_| spec.k)
}

/// A fixed fraction of every class: `round(fraction · n_c)` examples, at least
/// one.
pub fn sample_fraction(labels: &[usize], classes: &[usize], fraction: f64, seed: u64) -> Result<KShotSample, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    stratified(labels, classes, seed, |n| ((fraction * n as f64).round() as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes * per).map(|i| i % classes).collect()
    }

    #[test]
    fn ten_shot_over_seven_hundred_classes() {
        let labels = balanced(700, 12);
        let spec = FewShotSpec {
            k: 10,
            classes: (0..700).collect(),
            seed: 3,
        };
        let s = sample_kshot(&labels, &spec).unwrap();
        assert_eq!(s.indices.len(), 7000);
        assert!(s.short.is_empty());
        let mut seen = s.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 7000);
        assert_eq!(sample_kshot(&labels, &spec).unwrap(), s);
    }

    #[test]
    fn short_class_gives_everything_and_a_warning() {
        let labels = vec![0, 0, 0, 1];
        let spec = FewShotSpec {
            k: 2,
            classes: vec![0, 1],
            seed: 0,
        };
        let s = sample_kshot(&labels, &spec).unwrap();
        assert_eq!(s.indices.len(), 3);
        assert_eq!(s.short, vec![(1, 1)]);
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn empty_class_is_an_error() {
        let spec = FewShotSpec {
            k: 1,
            classes: vec![0, 5],
            seed: 0,
        };
        assert_eq!(sample_kshot(&[0, 0], &spec), Err(EvalError::EmptyClass(5)));
    }

    #[test]
    fn two_percent_of_imagenet_sized_classes() {
        let sizes = [732, 1300, 1250, 1274, 1276];
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let s = sample_fraction(&labels, &[0, 1, 2, 3, 4], 0.02, 1).unwrap();
        let counts: Vec<usize> = (0..5).map(|c| s.indices.iter().filter(|&&i| labels[i] == c).count()).collect();
        assert_eq!(counts, vec![15, 26, 25, 25, 26]);
    }
}
