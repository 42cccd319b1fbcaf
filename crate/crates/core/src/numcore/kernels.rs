//! Raw matrix kernels over row-major slices.
//!
//! Each output row is computed by one thread with a fixed summation order, so
//! `Exec::Sequential` and `Exec::Parallel` give bitwise-identical results.

use crate::par::{for_each_row, Exec};

/// Below this many multiply-adds the parallel path is not worth scheduling.
const PAR_MIN_WORK: usize = 1 << 15;

fn pick(exec: Exec, work: usize) -> Exec {
    if work < PAR_MIN_WORK {
        Exec::Sequential
    } else {
        exec
    }
}

/// `A (m×k) · B (k×n)`.
pub fn matmul(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_each_row(pick(exec, m * k * n), &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    });
    out
}

/// `A (m×k) · Bᵀ` where `B` is `n×k`.
pub fn matmul_nt(exec: Exec, a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    for_each_row(pick(exec, m * k * n), &mut out, n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// `Aᵀ · B` where `A` is `k×m` and `B` is `k×n`.
pub fn matmul_tn(exec: Exec, a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for_each_row(pick(exec, m * k * n), &mut out, n, |i, row| {
        for p in 0..k {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += api * bv;
            }
        }
    });
    out
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        out
    }

    #[test]
    fn variants_agree_with_naive_product() {
        let (m, k, n) = (7, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let close = |x: &[f64]| x.iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&matmul(Exec::Sequential, &a, &b, m, k, n)));
        assert!(close(&matmul_nt(Exec::Sequential, &a, &transpose(&b, k, n), m, k, n)));
        assert!(close(&matmul_tn(Exec::Sequential, &transpose(&a, m, k), &b, k, m, n)));
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let (m, k, n) = (64, 48, 40);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        assert_eq!(
            matmul(Exec::Sequential, &a, &b, m, k, n),
            matmul(Exec::Parallel, &a, &b, m, k, n)
        );
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let mut row = vec![3.5; 4];
        softmax_in_place(&mut row);
        assert!(row.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }
}
