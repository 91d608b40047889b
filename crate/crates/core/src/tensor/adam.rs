use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with first/second moments per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.dims().to_vec())).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Restores a saved optimizer state.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.dims() != b.dims()) {
            return Err(Error::InvalidInput("adam moments disagree in shape".into()));
        }
        Ok(Adam { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), self.m.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dims() != g.dims() || p.dims() != m.dims() {
                return Err(Error::dim(
                    "adam_step",
                    format!("param {:?}, grad {:?}, moment {:?}", p.dims(), g.dims(), m.dims()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Tensor::zeros([3])]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        // mhat = vhat = 1 → Δ = −0.1 / (1 + 1e-8)
        assert!((params[0].item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn quadratic_descent() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut params = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(cfg, &params);
        let f = |w: f64| (w - 3.0).powi(2);
        let f0 = f(0.0);
        for _ in 0..100 {
            let w = params[0].item();
            adam.step(&mut params, &[Tensor::scalar(2.0 * (w - 3.0))]).unwrap();
        }
        assert!(f(params[0].item()) <= 0.1 * f0, "f = {}", f(params[0].item()));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor::zeros([2])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.step(&mut params, &[Tensor::zeros([3])]).is_err());
    }
}
