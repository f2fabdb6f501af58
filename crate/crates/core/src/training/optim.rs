use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_fraction: f64,
    /// Steps of the whole run; the rate decays linearly to zero by the end.
    /// Zero disables the schedule.
    pub total_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_fraction: 0.05,
            total_steps: 0,
        }
    }
}

impl AdamConfig {
    /// Learning rate at 0-based step `t`.
    pub fn rate_at(&self, t: usize) -> f64 {
        if self.total_steps == 0 {
            return self.learning_rate;
        }
        let total = self.total_steps as f64;
        let warmup = (self.warmup_fraction * total).ceil().max(1.0);
        let step = t as f64 + 1.0;
        let factor = if step <= warmup {
            step / warmup
        } else {
            ((total - step + 1.0) / (total - warmup + 1.0)).clamp(0.0, 1.0)
        };
        self.learning_rate * factor
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Per-parameter update counts; parameters without a gradient in a step
    /// keep their moments untouched.
    t: Vec<u32>,
    step: usize,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: vec![0; params.len()],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        let lr = self.config.rate_at(self.step);
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.len() != p.numel() {
                return Err(Error::shape(format!("gradient {i} has the wrong length")));
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *x -= update;
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = AdamConfig {
            learning_rate: 1.0,
            total_steps: 100,
            ..AdamConfig::default()
        };
        assert!((c.rate_at(0) - 0.2).abs() < 1e-12);
        assert!((c.rate_at(4) - 1.0).abs() < 1e-12);
        assert!(c.rate_at(50) < 1.0 && c.rate_at(50) > 0.0);
        assert!(c.rate_at(99) > 0.0 && c.rate_at(99) < 0.02);
        let flat = AdamConfig {
            learning_rate: 0.5,
            ..AdamConfig::default()
        };
        assert_eq!(flat.rate_at(1000), 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::vector(vec![3.0, -2.0]).unwrap()];
        let mut adam = Adam::new(
            &p,
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let g: Vec<f64> = p[0].data().iter().map(|x| 2.0 * x).collect();
            adam.step(&mut p, &[Some(g)]).unwrap();
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-2), "{:?}", p[0]);
    }

    #[test]
    fn zero_rate_leaves_parameters_untouched() {
        let init = vec![Tensor::vector(vec![0.25, -1.5]).unwrap()];
        let mut p = init.clone();
        let mut adam = Adam::new(
            &p,
            AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
        );
        adam.step(&mut p, &[Some(vec![10.0, -3.0])]).unwrap();
        assert_eq!(p, init);
    }
}
