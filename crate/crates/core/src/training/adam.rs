use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Hyperparameters of the adaptive-moment optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps_hat > 0.0 && self.eps_hat.is_finite()) {
            return Err(Error::config(format!(
                "eps_hat must be positive, got {}",
                self.eps_hat
            )));
        }
        Ok(())
    }
}

/// Optimizer state: first and second moment buffers plus the step count.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    steps: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Adam> {
        config.validate()?;
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Ok(Adam {
            config,
            m: zeros(),
            v: zeros(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one bias-corrected update to every trainable parameter.
    /// Nothing changes when any trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if store.len() != self.m.len() || grads.grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "optimizer state holds {} tensors, parameters {} and gradients {}",
                self.m.len(),
                store.len(),
                grads.grads.len()
            )));
        }
        for ((p, g), m) in store.iter().zip(&grads.grads).zip(&self.m) {
            if g.shape() != p.value.shape() || m.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "optimizer_step",
                    left: p.value.shape(),
                    right: g.shape(),
                });
            }
            if p.trainable && !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
            }
        }
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps_hat,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.steps as f64);
        let c2 = 1.0 - beta2.powf(self.steps as f64);
        for (((p, g), m), v) in store
            .iter_mut()
            .zip(&grads.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if !p.trainable {
                continue;
            }
            let values = p.value.data_mut();
            for (((x, &gi), mi), vi) in values
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}
