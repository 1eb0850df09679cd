use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::{Param, Parameterized, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<F> {
    pub m: ArrayD<F>,
    pub v: ArrayD<F>,
}

/// Adam with bias correction. Moments are keyed by parameter name so the
/// state can be checkpointed and restored independently of layer order.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    config: AdamConfig,
    steps: u64,
    moments: BTreeMap<String, AdamMoments<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn from_parts(config: AdamConfig, steps: u64, moments: BTreeMap<String, AdamMoments<F>>) -> Self {
        Self {
            config,
            steps,
            moments,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> &BTreeMap<String, AdamMoments<F>> {
        &self.moments
    }

    /// One update of every parameter of `module` from its accumulated
    /// gradient. Gradients are not cleared.
    pub fn step(&mut self, module: &mut dyn Parameterized<F>) {
        self.steps += 1;
        let t = self.steps as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (one_b1, one_b2) = (F::from_f64(1.0 - c.beta1), F::from_f64(1.0 - c.beta2));
        let step_size = F::from_f64(c.lr / bc1);
        let inv_bc2 = F::from_f64(1.0 / bc2);
        let eps = F::from_f64(c.eps);
        let moments = &mut self.moments;
        module.visit_mut(&mut |p: &mut Param<F>| {
            let state = moments.entry(p.name.clone()).or_insert_with(|| AdamMoments {
                m: ArrayD::zeros(p.value.raw_dim()),
                v: ArrayD::zeros(p.value.raw_dim()),
            });
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut state.m)
                .and(&mut state.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        });
    }
}
