use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
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

/// Adaptive-moment optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Gradients are validated before any parameter moves.
    pub fn update(&mut self, params: Vec<&mut [S]>, grads: &[&[S]], labels: &[String]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::contract(format!("tensor {i} shape mismatch")));
            }
            if !g.iter().all(|v| v.is_finite()) {
                let what = labels.get(i).cloned().unwrap_or_else(|| format!("tensor {i}"));
                return Err(Error::NonFinite {
                    what: format!("gradient of {what}"),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bias1 = S::one() - S::lit(c.beta1.powi(self.step as i32));
        let bias2 = S::one() - S::lit(c.beta2.powi(self.step as i32));
        let (lr, eps) = (S::lit(c.lr), S::lit(c.eps));
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.iter().all(|x| x.is_finite()) {
                let what = labels.get(i).cloned().unwrap_or_else(|| format!("tensor {i}"));
                return Err(Error::NonFinite {
                    what: format!("parameters of {what} after update"),
                });
            }
        }
        Ok(())
    }
}
