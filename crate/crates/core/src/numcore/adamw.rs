//! AdamW: Adam with bias-corrected moments and decoupled weight decay.

use super::error::TensorError;
use super::tensor::Tensor;

/// Hyperparameters. Defaults follow the common PyTorch choice except for
/// `weight_decay`, which is off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl OptState {
    pub fn new(like: &Tensor) -> Self {
        OptState {
            m: Tensor::zeros(like.shape().to_vec()),
            v: Tensor::zeros(like.shape().to_vec()),
            t: 0,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<(), TensorError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TensorError::invalid("adamw", "betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TensorError::invalid("adamw", "eps must be positive and weight decay non-negative"));
        }
        Ok(())
    }

    /// Updates `param` and `state` in place.
    pub fn step(&self, param: &mut Tensor, grad: &Tensor, state: &mut OptState, lr: f64) -> Result<(), TensorError> {
        if param.shape() != grad.shape() || state.m.shape() != param.shape() || state.v.shape() != param.shape() {
            return Err(TensorError::shape(
                "adamw",
                format!("param {:?} grad {:?} state {:?}", param.shape(), grad.shape(), state.m.shape()),
            ));
        }
        if !(lr >= 0.0) {
            return Err(TensorError::invalid("adamw", "learning rate must be non-negative"));
        }
        self.validate()?;
        if !grad.is_finite() {
            return Err(TensorError::NonFinite { op: "adamw" });
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        let p = param.data_mut();
        let (m, v) = (state.m.data_mut(), state.v.data_mut());
        for (((p, &g), m), v) in p.iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameter and state.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    param: &Tensor,
    grad: &Tensor,
    state: &OptState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<(Tensor, OptState), TensorError> {
    let opt = AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
    };
    let mut p = param.clone();
    let mut s = state.clone();
    opt.step(&mut p, grad, &mut s, lr)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let p = Tensor::from_fn([3], |i| i as f64 + 0.5);
        let s = OptState::new(&p);
        let (p2, s2) = adamw_step(&p, &Tensor::zeros([3]), &s, 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.m, Tensor::zeros([3]));
        assert_eq!(s2.v, Tensor::zeros([3]));
        assert_eq!(s2.t, 1);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let p = Tensor::scalar(1.0);
        let (p2, s2) = adamw_step(&p, &Tensor::scalar(0.5), &OptState::new(&p), 0.1, 0.9, 0.999, 1e-8, 0.0).unwrap();
        // m̂ = 0.5, v̂ = 0.25
        let want = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((p2.data()[0] - want).abs() <= 1e-12);
        assert!((p2.data()[0] - 0.9).abs() < 1e-8);
        assert!((s2.m.data()[0] - 0.05).abs() < 1e-15);
        assert!((s2.v.data()[0] - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_still_updates_moments() {
        let p = Tensor::scalar(2.0);
        let (p2, s2) = adamw_step(&p, &Tensor::scalar(1.0), &OptState::new(&p), 0.0, 0.9, 0.999, 1e-8, 0.1).unwrap();
        assert_eq!(p2, p);
        assert!(s2.m.data()[0] > 0.0 && s2.v.data()[0] > 0.0);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let p = Tensor::scalar(2.0);
        let (p2, _) = adamw_step(&p, &Tensor::scalar(0.0), &OptState::new(&p), 0.1, 0.9, 0.999, 1e-8, 0.5).unwrap();
        assert!((p2.data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Tensor::scalar(1.0);
        let s = OptState::new(&p);
        assert!(adamw_step(&p, &Tensor::scalar(f64::NAN), &s, 0.1, 0.9, 0.999, 1e-8, 0.0).is_err());
        assert!(adamw_step(&p, &Tensor::ones([2]), &s, 0.1, 0.9, 0.999, 1e-8, 0.0).is_err());
        assert!(adamw_step(&p, &Tensor::scalar(1.0), &s, 0.1, 1.0, 0.999, 1e-8, 0.0).is_err());
    }
}
