use serde::{Deserialize, Serialize};

use super::dense::{FeedforwardNet, Gradients, Tape};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -0.5;
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

/// Diagonal Gaussian over actions with a state-independent learnable log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicyHead<S> {
    pub mean_net: FeedforwardNet<S>,
    pub log_std: Vec<S>,
}

impl<S: Scalar> GaussianPolicyHead<S> {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut RngStream) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Ok(GaussianPolicyHead {
            mean_net: FeedforwardNet::orthogonal(&sizes, 2f64.sqrt(), POLICY_OUTPUT_GAIN, rng)?,
            log_std: vec![S::lit(LOG_STD_INIT); action_dim],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<S> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, obs: &[S]) -> Result<Vec<S>> {
        self.mean_net.forward(obs)
    }

    /// Action drawn as `mean + std * z` with its exact log density.
    pub fn sample(&self, obs: &[S], rng: &mut RngStream) -> Result<(Vec<S>, S)> {
        let mean = self.mean(obs)?;
        Ok(self.sample_around(&mean, rng))
    }

    pub fn sample_around(&self, mean: &[S], rng: &mut RngStream) -> (Vec<S>, S) {
        let action: Vec<S> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| *m + l.exp() * rng.normal::<S>())
            .collect();
        let lp = self.log_density(mean, &action);
        (action, lp)
    }

    pub fn log_prob(&self, obs: &[S], action: &[S]) -> Result<S> {
        if action.len() != self.action_dim() {
            return Err(Error::contract("action dimension mismatch"));
        }
        let mean = self.mean(obs)?;
        Ok(self.log_density(&mean, action))
    }

    pub fn log_density(&self, mean: &[S], action: &[S]) -> S {
        let half_log_two_pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), l)| {
                let z = (*a - *m) / l.exp();
                -S::lit(0.5) * z * z - *l - half_log_two_pi
            })
            .sum()
    }

    pub fn entropy(&self) -> S {
        let c = S::lit(0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        self.log_std.iter().map(|l| *l + c).sum()
    }

    pub fn clamp_log_std(&mut self) {
        for l in &mut self.log_std {
            *l = l.max(S::lit(LOG_STD_MIN)).min(S::lit(LOG_STD_MAX));
        }
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        let mut s = self.mean_net.tensor_shapes();
        s.push(self.log_std.len());
        s
    }

    pub fn tensor_labels(&self) -> Vec<String> {
        let mut l = self.mean_net.tensor_labels();
        l.push("log_std".into());
        l
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut t = self.mean_net.tensors_mut();
        t.push(self.log_std.as_mut_slice());
        t
    }

    pub fn all_finite(&self) -> bool {
        self.mean_net.all_finite() && self.log_std.iter().all(|l| l.is_finite())
    }

    /// Per-row log densities of `actions` under the batch recorded in `tape`.
    pub fn batch_log_probs(&self, tape: &Tape<S>, actions: &[S]) -> Vec<S> {
        let d = self.action_dim();
        tape.output()
            .chunks(d)
            .zip(actions.chunks(d))
            .map(|(m, a)| self.log_density(m, a))
            .collect()
    }

    /// Gradient of `sum_b w_b * log pi(a_b | o_b) + w_ent * entropy` with
    /// respect to every policy parameter.
    pub fn log_prob_gradients(
        &self,
        tape: &Tape<S>,
        actions: &[S],
        row_weights: &[S],
        entropy_weight: S,
    ) -> Result<Gradients<S>> {
        let d = self.action_dim();
        if actions.len() != tape.batch() * d || row_weights.len() != tape.batch() {
            return Err(Error::contract("batch shapes disagree"));
        }
        let inv_var: Vec<S> = self.log_std.iter().map(|l| (-(*l + *l)).exp()).collect();
        let mut d_mean = vec![S::zero(); actions.len()];
        let mut d_log_std = vec![entropy_weight; d];
        for (b, (&w, (m, a))) in row_weights
            .iter()
            .zip(tape.output().chunks(d).zip(actions.chunks(d)))
            .enumerate()
        {
            for j in 0..d {
                let diff = a[j] - m[j];
                d_mean[b * d + j] = w * diff * inv_var[j];
                d_log_std[j] += w * (diff * diff * inv_var[j] - S::one());
            }
        }
        let mut grads = self.mean_net.zero_gradients();
        self.mean_net.backward_into(tape, &d_mean, &mut grads)?;
        grads.tensors.push(d_log_std);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(seed: u64) -> GaussianPolicyHead<f64> {
        let mut rng = RngStream::from_seed(seed);
        GaussianPolicyHead::new(3, &[8, 8], 2, &mut rng).unwrap()
    }

    #[test]
    fn tiny_std_samples_hug_the_mean() {
        let mut h = head(0);
        h.log_std = vec![LOG_STD_MIN; 2];
        let obs = [0.1, 0.2, 0.3];
        let mean = h.mean(&obs).unwrap();
        let mut rng = RngStream::from_seed(1);
        let n = 2000;
        let mut close = [0usize; 2];
        for _ in 0..n {
            let (a, _) = h.sample(&obs, &mut rng).unwrap();
            for j in 0..2 {
                if (a[j] - mean[j]).abs() < 0.03 {
                    close[j] += 1;
                }
            }
        }
        for c in close {
            assert!(c as f64 / n as f64 > 0.99);
        }
    }

    #[test]
    fn log_prob_at_mean() {
        let h = head(2);
        let obs = [0.3, -0.1, 0.9];
        let mean = h.mean(&obs).unwrap();
        let lp = h.log_prob(&obs, &mean).unwrap();
        let expect = -h.log_std.iter().sum::<f64>() - (2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn empirical_mean_within_three_standard_errors() {
        let h = head(3);
        let obs = [0.5, 0.5, -0.5];
        let mean = h.mean(&obs).unwrap();
        let std = h.std();
        let mut rng = RngStream::from_seed(4);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let (a, _) = h.sample(&obs, &mut rng).unwrap();
            sum[0] += a[0];
            sum[1] += a[1];
        }
        for j in 0..2 {
            let err = (sum[j] / n as f64 - mean[j]).abs();
            assert!(err < 3.0 * std[j] / (n as f64).sqrt(), "dim {j}: {err}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = RngStream::from_seed(5);
        let h = GaussianPolicyHead::<f64>::new(2, &[4], 1, &mut rng).unwrap();
        let obs = [0.2, -0.4];
        let m = h.mean(&obs).unwrap()[0];
        let s = h.std()[0];
        let (lo, hi, n) = (m - 10.0 * s, m + 10.0 * s, 20_000);
        let dx = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|i| {
                let a = lo + (i as f64 + 0.5) * dx;
                h.log_prob(&obs, &[a]).unwrap().exp() * dx
            })
            .sum();
        assert!((integral - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mean_action_is_deterministic_and_matches_net() {
        let h = head(6);
        let obs = [1.0, 2.0, 3.0];
        assert_eq!(h.mean(&obs).unwrap(), h.mean(&obs).unwrap());
        assert_eq!(h.mean(&obs).unwrap(), h.mean_net.forward(&obs).unwrap());
    }

    #[test]
    fn log_std_is_clamped() {
        let mut h = head(7);
        h.log_std = vec![-9.0, 4.0];
        h.clamp_log_std();
        assert_eq!(h.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
        assert!(h.std().iter().all(|s| *s > 0.0));
    }
}
