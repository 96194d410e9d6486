use crate::error::{contract, dimension, Result};
use crate::scalar::Real;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with zeroed moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first: Vec<_> = params
            .into_iter()
            .map(|p| {
                let (r, c) = p.dims();
                Tensor::zeros(r, c)
            })
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(contract(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dims() != self.first[i].dims() || g.dims() != self.first[i].dims() {
                return Err(dimension(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let one = T::one();
        let bc1 = T::lit(1.0 - beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = b1 * md[j] + (one - b1) * gj;
                vd[j] = b2 * vd[j] + (one - b2) * gj * gj;
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                pd[j] = pd[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st).unwrap();
        // lr * 1 / (1 + 1e-8)
        assert!((p.item().unwrap() - (1.0 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p.item().unwrap() - 0.999).abs() < 1e-10);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = Tensor::row(vec![0.5f64, -2.0]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        adam_step(&mut [&mut p], &[Tensor::row(vec![1.0, 1.0])], &mut st).unwrap();
        let after_first = p.clone();
        let m1 = st.first_moments()[0].max_abs();
        adam_step(&mut [&mut p], &[Tensor::row(vec![0.0, 0.0])], &mut st).unwrap();
        assert!(st.first_moments()[0].max_abs() < m1);
        // zero gradient from a fresh state
        let mut q = Tensor::row(vec![0.5f64, -2.0]);
        let mut fresh = AdamState::new(AdamConfig::default(), [&q]);
        for _ in 0..5 {
            adam_step(&mut [&mut q], &[Tensor::row(vec![0.0, 0.0])], &mut fresh).unwrap();
        }
        assert_eq!(q.data(), &[0.5, -2.0]);
        assert_eq!(fresh.first_moments()[0].max_abs(), 0.0);
        assert_ne!(after_first.data(), &[0.5, -2.0]);
        assert_eq!(fresh.step_count(), 5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::row(vec![0.0f64; 3]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        assert!(adam_step(&mut [&mut p], &[Tensor::row(vec![0.0; 2])], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
