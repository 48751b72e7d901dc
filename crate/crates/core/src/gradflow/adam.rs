use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Moment estimates for one group of parameters.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// L2 penalty coefficient folded into the gradient before the update.
    pub weight_decay: F,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for AdamState<F> {
    fn default() -> Self {
        Self::new(F::lit(0.9), F::lit(0.999), F::lit(1e-8))
    }
}

impl<F: Scalar> AdamState<F> {
    pub fn new(beta1: F, beta2: F, eps: F) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay: F::zero(),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: F) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<F: Scalar>(
    params: &mut [&mut Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut AdamState<F>,
    lr: F,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.shape() != p.shape())
    {
        return Err(Error::InvalidArgument(
            "parameter group changed shape between Adam steps".into(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = F::one() - state.beta1.powi(t);
    let bc2 = F::one() - state.beta2.powi(t);
    let (b1, b2, eps, wd) = (state.beta1, state.beta2, state.eps, state.weight_decay);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i] + wd * pd[i];
            let mi = b1 * m.data()[i] + (F::one() - b1) * gi;
            let vi = b2 * v.data()[i] + (F::one() - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::<f64>::default();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, 0.05).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::<f64>::default();
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st, 0.05).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expected = 1.0 - 0.05 / (1.0 + 1e-8);
        assert!((p.item().unwrap() - expected).abs() < 1e-15);
        assert!((p.item().unwrap() - 0.95).abs() < 1e-9);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
            let mut st = AdamState::<f64>::default();
            let mut traj = Vec::new();
            for k in 0..20 {
                let g = p.map(|x| 2.0 * x + k as f64 * 0.01);
                adam_step(&mut [&mut p], &[g], &mut st, 0.05).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut st = AdamState::default();
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, 0.1).is_err());
    }
}
