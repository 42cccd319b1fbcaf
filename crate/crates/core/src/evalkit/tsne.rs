//! Exact t-SNE: O(N²) affinities and gradients.

use rand_distr::{Distribution, Normal};

use super::EvalError;
use crate::numcore::Tensor;
use crate::par::{for_each_row, map_indexed, Exec};
use crate::rng::{rng_from, stream};

pub const TSNE_MAX_POINTS: usize = 5000;

/// Bisection stops once a row's perplexity is this close to the target.
const PERPLEXITY_TOL: f64 = 1e-6;
const BISECTION_STEPS: usize = 200;
/// Relative size of the noise added when exact duplicate points exist.
const DUPLICATE_JITTER: f64 = 1e-8;
const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// `None` uses `max(N / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub exec: Exec,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    /// `N × 2` coordinates.
    pub coords: Tensor,
    /// Calibrated perplexity of every row.
    pub perplexities: Vec<f64>,
    /// Gaussian precision `1 / (2σ²)` of every row.
    pub betas: Vec<f64>,
    /// KL(P‖Q) after the first and after the final iteration.
    pub kl_first: f64,
    pub kl_final: f64,
    pub jittered: bool,
}

fn sq_distances(exec: Exec, x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for_each_row(exec, &mut out, n, |i, row| {
        let xi = &x[i * d..(i + 1) * d];
        for (j, o) in row.iter_mut().enumerate() {
            *o = xi.iter().zip(&x[j * d..(j + 1) * d]).map(|(a, b)| (a - b).powi(2)).sum();
        }
    });
    out
}

/// Conditional distribution of row `i` at precision `beta`; returns the
/// perplexity `exp(H)`.
fn row_probs(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (dj - dmin)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h.exp()
}

/// Bisection on `beta` so the row's perplexity meets `target`.
fn calibrate_row(dist: &[f64], i: usize, target: f64, out: &mut [f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut perp = row_probs(dist, i, beta, out);
    for _ in 0..BISECTION_STEPS {
        if (perp - target).abs() < PERPLEXITY_TOL {
            break;
        }
        if perp > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        perp = row_probs(dist, i, beta, out);
    }
    (beta, perp)
}

fn kl(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(P_FLOOR)).ln())
        .sum()
}

/// Student-t kernel `1 / (1 + |yi - yj|²)` with a zero diagonal, and its sum.
fn kernel(exec: Exec, y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    for_each_row(exec, &mut num, n, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            if j != i {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                *o = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let z = num.iter().sum();
    (num, z)
}

/// Embeds the rows of `x` (`N × D`) in two dimensions.
///
/// Rows are calibrated to the target perplexity by bisection; optimisation
/// is gradient descent on KL(P‖Q) with early exaggeration, momentum (0.5,
/// then 0.8) and per-coordinate gains. If two rows are identical, Gaussian
/// noise of standard deviation `1e-8 ×` the largest feature spread is added
/// to every value first.
pub fn tsne(x: &Tensor, opts: &TsneOptions) -> Result<TsneResult, EvalError> {
    let (n, d) = x.dims2("tsne").map_err(|e| EvalError::Shape(e.to_string()))?;
    if !x.is_finite() {
        return Err(EvalError::Invalid("embeddings contain non-finite values".into()));
    }
    if !(opts.perplexity >= 1.0) || (n as f64) < 3.0 * opts.perplexity {
        return Err(EvalError::Invalid(format!(
            "need N >= 3 * perplexity: N = {n}, perplexity = {}",
            opts.perplexity
        )));
    }
    if n > TSNE_MAX_POINTS {
        return Err(EvalError::Invalid(format!("exact t-SNE is capped at {TSNE_MAX_POINTS} points, got {n}")));
    }
    if opts.iters == 0 {
        return Err(EvalError::Invalid("iters must be positive".into()));
    }
    let exec = opts.exec;
    let mut data = x.data().to_vec();
    let mut dist = sq_distances(exec, &data, n, d);
    let duplicate = (0..n).any(|i| (i + 1..n).any(|j| dist[i * n + j] == 0.0));
    if duplicate {
        let spread = (0..d)
            .map(|c| {
                let col = (0..n).map(|i| data[i * d + c]);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                hi - lo
            })
            .fold(0.0, f64::max);
        let scale = if spread > 0.0 { spread } else { 1.0 } * DUPLICATE_JITTER;
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let mut rng = rng_from(opts.seed, &[stream::TSNE, 1]);
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        dist = sq_distances(exec, &data, n, d);
    }

    let rows = map_indexed(exec, n, |i| {
        let mut p = vec![0.0; n];
        let (beta, perp) = calibrate_row(&dist[i * n..(i + 1) * n], i, opts.perplexity, &mut p);
        (p, beta, perp)
    });
    let mut p = vec![0.0; n * n];
    let (mut betas, mut perplexities) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (i, (row, beta, perp)) in rows.into_iter().enumerate() {
        p[i * n..(i + 1) * n].copy_from_slice(&row);
        betas.push(beta);
        perplexities.push(perp);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    let total: f64 = sym.iter().sum();
    sym.iter_mut().for_each(|v| *v /= total);

    let normal = Normal::new(0.0, 1e-4).expect("positive");
    let mut rng = rng_from(opts.seed, &[stream::TSNE, 0]);
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let lr = opts
        .learning_rate
        .unwrap_or_else(|| (n as f64 / opts.early_exaggeration / 4.0).max(50.0));
    let mut kl_first = f64::NAN;
    for it in 0..opts.iters {
        let exaggerating = it < opts.exaggeration_iters;
        let exag = if exaggerating { opts.early_exaggeration } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let (num, z) = kernel(exec, &y, n);
        let mut grad = vec![0.0; 2 * n];
        for_each_row(exec, &mut grad, 2, |i, g| {
            for j in 0..n {
                let nij = num[i * n + j];
                let w = (exag * sym[i * n + j] - nij / z) * nij;
                g[0] += 4.0 * w * (y[2 * i] - y[2 * j]);
                g[1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
            }
        });
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - lr * gains[k] * grad[k];
            y[k] += update[k];
        }
        let mean = [0, 1].map(|c| (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64);
        for i in 0..n {
            y[2 * i] -= mean[0];
            y[2 * i + 1] -= mean[1];
        }
        if it == 0 {
            let (num, z) = kernel(exec, &y, n);
            kl_first = kl(&sym, &num, z);
        }
    }
    let (num, z) = kernel(exec, &y, n);
    let kl_final = kl(&sym, &num, z);
    Ok(TsneResult {
        coords: Tensor::new([n, 2], y).expect("n > 0"),
        perplexities,
        betas,
        kl_first,
        kl_final,
        jittered: duplicate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_points_get_equal_bandwidths() {
        // Regular polygon: every row sees the same multiset of distances.
        let n = 12;
        let x = Tensor::from_fn([n, 2], |k| {
            let a = std::f64::consts::TAU * (k / 2) as f64 / n as f64;
            if k % 2 == 0 { a.cos() } else { a.sin() }
        });
        let r = tsne(&x, &TsneOptions { perplexity: 4.0, iters: 5, ..TsneOptions::default() }).unwrap();
        assert!(r.betas.iter().all(|&b| (b - r.betas[0]).abs() < 1e-9 * r.betas[0]));
        assert!(r.perplexities.iter().all(|&p| (p - 4.0).abs() < 1e-3));
    }

    #[test]
    fn too_few_points_is_an_error() {
        let x = Tensor::from_fn([20, 3], |k| k as f64);
        assert!(tsne(&x, &TsneOptions::default()).is_err());
    }

    #[test]
    fn duplicates_are_jittered() {
        let x = Tensor::from_fn([9, 2], |k| ((k / 2) % 3) as f64);
        let r = tsne(&x, &TsneOptions { perplexity: 2.0, iters: 50, ..TsneOptions::default() }).unwrap();
        assert!(r.jittered);
        assert!(r.coords.is_finite());
    }
}
