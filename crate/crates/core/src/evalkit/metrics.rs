use super::EvalError;
use crate::numcore::Tensor;

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize), EvalError> {
    let (n, c) = logits.dims2("topk").map_err(|e| EvalError::Shape(e.to_string()))?;
    if n != labels.len() {
        return Err(EvalError::Shape(format!("{n} logit rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(EvalError::Shape(format!("label {bad} with {c} classes")));
    }
    Ok((n, c))
}

/// Rank of `y` in `row`, counting strictly larger logits plus equal logits
/// at smaller class indices.
fn rank(row: &[f64], y: usize) -> usize {
    let v = row[y];
    row.iter()
        .enumerate()
        .filter(|&(j, &x)| x > v || (x == v && j < y))
        .count()
}

fn hits(logits: &Tensor, labels: &[usize], k: usize) -> Vec<bool> {
    let c = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| rank(&logits.data()[i * c..(i + 1) * c], y) < k)
        .collect()
}

/// Fraction of rows whose label is among the `k` largest logits. Ties go to
/// the smaller class index.
pub fn topk_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64, EvalError> {
    let (n, c) = check_logits(logits, labels)?;
    if k == 0 || k > c {
        return Err(EvalError::BadK { k, n_classes: c });
    }
    if n == 0 {
        return Err(EvalError::Shape("no rows".into()));
    }
    Ok(hits(logits, labels, k).iter().filter(|&&h| h).count() as f64 / n as f64)
}

/// Top-k accuracy over samples of the subset classes and over the rest.
/// Both are averaged over samples, not over classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetReport {
    pub subset_acc: f64,
    /// `None` when every sample belongs to the subset.
    pub rest_acc: Option<f64>,
}

pub fn subset_report(logits: &Tensor, labels: &[usize], subset_classes: &[usize], k: usize) -> Result<SubsetReport, EvalError> {
    let (_, c) = check_logits(logits, labels)?;
    if subset_classes.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    if let Some(&bad) = subset_classes.iter().find(|&&s| s >= c) {
        return Err(EvalError::Shape(format!("subset class {bad} with {c} classes")));
    }
    if k == 0 || k > c {
        return Err(EvalError::BadK { k, n_classes: c });
    }
    let h = hits(logits, labels, k);
    let (mut sub, mut rest) = ((0usize, 0usize), (0usize, 0usize));
    for (&y, &hit) in labels.iter().zip(&h) {
        let slot = if subset_classes.contains(&y) { &mut sub } else { &mut rest };
        slot.0 += hit as usize;
        slot.1 += 1;
    }
    if sub.1 == 0 {
        return Err(EvalError::EmptySubset);
    }
    Ok(SubsetReport {
        subset_acc: sub.0 as f64 / sub.1 as f64,
        rest_acc: (rest.1 > 0).then(|| rest.0 as f64 / rest.1 as f64),
    })
}

/// Mean silhouette coefficient of `points` (`N × D`) under Euclidean distance.
/// Points in singleton clusters score 0.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> Result<f64, EvalError> {
    let (n, _) = points.dims2("silhouette").map_err(|e| EvalError::Shape(e.to_string()))?;
    if n != labels.len() {
        return Err(EvalError::Shape(format!("{n} points, {} labels", labels.len())));
    }
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    if labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
        return Err(EvalError::Invalid("silhouette needs at least two clusters".into()));
    }
    let dist = |i: usize, j: usize| {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; n_clusters];
        let mut counts = vec![0usize; n_clusters];
        for j in (0..n).filter(|&j| j != i) {
            sums[labels[j]] += dist(i, j);
            counts[labels[j]] += 1;
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_ranks() {
        // Label ranked 2nd, 6th and 1st.
        let logits = Tensor::new(
            [3, 6],
            vec![
                0.9, 0.8, 0.1, 0.0, 0.0, 0.0, //
                0.6, 0.5, 0.4, 0.3, 0.2, 0.1, //
                0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        assert!((topk_accuracy(&logits, &[1, 5, 4], 5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(topk_accuracy(&logits, &[1, 5, 4], 1).unwrap(), 1.0 / 3.0);
        assert!(topk_accuracy(&logits, &[1, 5, 4], 7).is_err());
        assert!(topk_accuracy(&logits, &[1, 5, 4], 0).is_err());
    }

    #[test]
    fn ties_favour_the_smaller_index() {
        let logits = Tensor::zeros([2, 4]);
        assert_eq!(topk_accuracy(&logits, &[0, 1], 1).unwrap(), 0.5);
        assert_eq!(topk_accuracy(&logits, &[0, 3], 3).unwrap(), 0.5);
    }

    #[test]
    fn subset_split() {
        let logits = Tensor::new([4, 3], vec![1., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 1.]).unwrap();
        let r = subset_report(&logits, &[0, 1, 2, 0], &[0], 1).unwrap();
        assert_eq!(r.subset_acc, 0.5);
        assert_eq!(r.rest_acc, Some(0.5));
        let all = subset_report(&logits, &[0, 1, 2, 0], &[0, 1, 2], 1).unwrap();
        assert_eq!(all.rest_acc, None);
        assert_eq!(subset_report(&logits, &[0, 1, 2, 0], &[], 1), Err(EvalError::EmptySubset));
    }

    #[test]
    fn silhouette_of_separated_pairs() {
        let p = Tensor::new([4, 1], vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let s = silhouette(&p, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.8);
        let swapped = silhouette(&p, &[0, 1, 0, 1]).unwrap();
        assert!(swapped < 0.0);
    }
}
