use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per tensor of the store
/// (buffers keep zero-sized placeholders).
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| ArrayD::zeros(if p.trainable { p.value.raw_dim() } else { ndarray::IxDyn(&[0]) }))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every trainable tensor, then
    /// zeroes the gradients.
    pub fn step(&mut self, params: &mut ParamStore<F>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let one_m_b1 = F::from_f64_lossy(1.0 - c.beta1);
        let one_m_b2 = F::from_f64_lossy(1.0 - c.beta2);
        let corr1 = F::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = F::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = F::from_f64_lossy(c.lr);
        let eps = F::from_f64_lossy(c.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|theta, &g, m, v| {
                    *m = b1 * *m + one_m_b1 * g;
                    *v = b2 * *v + one_m_b2 * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        params.zero_grads();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn scalar_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.register("w", &[1], Init::Zeros, true);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = ParamStore::<f64>::new();
        s.register("k", &[2, 3], Init::Uniform { bound: 1.0 }, true);
        s.init_parameters(1);
        let before = s.get(0).value.clone();
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.get(0).value, before);
    }

    #[test]
    fn first_step_of_unit_gradient() {
        let mut s = scalar_store();
        s.get_mut(0).grad.fill(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s);
        let delta = s.get(0).value[[0]];
        // m_hat = v_hat = 1 after bias correction
        assert!((delta - (-9.999e-4)).abs() < 1e-7, "delta = {delta}");
        assert!((delta - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
        assert_eq!(s.get(0).grad[[0]], 0.0);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let run = || {
            let mut s = ParamStore::<f32>::new();
            s.register("k", &[3, 4], Init::Uniform { bound: 0.3 }, true);
            s.init_parameters(5);
            let mut adam = AdamState::new(AdamConfig::default(), &s);
            for step in 0..10 {
                let g = s.get(0).value.mapv(|v| v * 0.5 + step as f32 * 0.01);
                s.get_mut(0).grad.assign(&g);
                adam.step(&mut s);
            }
            s.get(0).value.clone()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
