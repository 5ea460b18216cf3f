use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Running per-component mean and variance (Welford). With `center = false`
/// only the scale is removed, so zero stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm<S> {
    pub count: u64,
    pub mean: Vec<S>,
    m2: Vec<S>,
    pub center: bool,
    pub min_std: S,
}

impl<S: Scalar> RunningNorm<S> {
    pub fn new(dim: usize, center: bool) -> Self {
        RunningNorm {
            count: 0,
            mean: vec![S::zero(); dim],
            m2: vec![S::zero(); dim],
            center,
            min_std: S::lit(1e-8),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[S]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::contract("normalizer dimension mismatch"));
        }
        self.count += 1;
        let n = S::lit(self.count as f64);
        for ((m, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
        Ok(())
    }

    /// Per-component std; 1 before any data, floored at `min_std`.
    pub fn std(&self) -> Vec<S> {
        if self.count < 2 {
            return vec![S::one(); self.dim()];
        }
        let n = S::lit(self.count as f64);
        self.m2.iter().map(|m2| (*m2 / n).sqrt().max(self.min_std)).collect()
    }

    fn offset(&self) -> Vec<S> {
        if self.center {
            self.mean.clone()
        } else {
            vec![S::zero(); self.dim()]
        }
    }

    pub fn normalize(&self, x: &[S]) -> Vec<S> {
        let std = self.std();
        let off = self.offset();
        x.iter()
            .zip(std.iter().zip(&off))
            .map(|(v, (s, o))| (*v - *o) / *s)
            .collect()
    }

    pub fn denormalize(&self, y: &[S]) -> Vec<S> {
        let std = self.std();
        let off = self.offset();
        y.iter()
            .zip(std.iter().zip(&off))
            .map(|(v, (s, o))| *v * *s + *o)
            .collect()
    }
}
