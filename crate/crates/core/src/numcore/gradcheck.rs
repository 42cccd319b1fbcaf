use rand::seq::index;

use super::error::TensorError;
use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::rng;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates of each input.
    pub max_coords_per_input: Option<usize>,
    /// Seed for choosing coordinates.
    pub seed: u64,
    /// Lower bound on the relative-error denominator; gradient components
    /// smaller than this are effectively compared in absolute terms.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_input: None,
            seed: 0,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Worst relative error between the analytic gradient of a scalar function
/// and central finite differences, over every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    grad_check_with(f, inputs, &opts).map(|r| r.max_rel_error)
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    if !(opts.eps > 0.0) {
        return Err(TensorError::invalid("grad_check", "eps must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::invalid(
            "grad_check",
            format!("function must be scalar-valued, got shape {:?}", g.shape(out)),
        ));
    }
    let grads = g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut rng = rng::rng_from(opts.seed, &[rng::stream::SAMPLE]);
    for (which, var) in vars.iter().enumerate() {
        let n = inputs[which].numel();
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(limit) if limit < n => {
                let mut c = index::sample(&mut rng, n, limit).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for coord in coords {
            let analytic = grads.get(*var).map_or(0.0, |t| t.data()[coord]);
            let orig = inputs[which].data()[coord];
            work[which].data_mut()[coord] = orig + opts.eps;
            let plus = evaluate(&f, &work)?;
            work[which].data_mut()[coord] = orig - opts.eps;
            let minus = evaluate(&f, &work)?;
            work[which].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let denom = analytic.abs().max(numeric.abs()).max(opts.denom_floor);
            let err = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if err > report.max_rel_error || report.coords_checked == 1 {
                report.max_rel_error = err;
                report.worst_input = which;
                report.worst_coord = coord;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[Tensor::from_fn([3], |i| i as f64)],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let r = grad_check(|_, v| Ok(v[0]), &[Tensor::ones([2])], 1e-5);
        assert!(matches!(r, Err(TensorError::Invalid { .. })));
    }
}
