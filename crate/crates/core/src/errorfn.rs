//! The error-prediction function `E(s, a, mu) -> e`: paired reference and
//! validation rollouts, T-step error targets and their regression.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{EnvInstance, ParamScaler};
use crate::error::{Error, Result};
use crate::net::{Adam, AdamConfig, BottleneckNet, FeedforwardNet, GaussianPolicyHead, RunningNorm};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// The policy receives the whole predicted state error.
    Full,
    /// The policy receives the bottleneck latent.
    Projected,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Representation::Full => "full",
            Representation::Projected => "projected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorFnConfig {
    /// Error horizon `T` in control steps.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub representation: Representation,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub minibatch_size: usize,
    /// Gradient steps per refresh.
    pub train_steps: usize,
    /// Paired-rollout samples collected per refresh.
    pub samples_per_refresh: usize,
    pub capacity: usize,
}

impl Default for ErrorFnConfig {
    fn default() -> Self {
        ErrorFnConfig {
            horizon: 5,
            representation: Representation::Projected,
            latent_dim: 2,
            hidden: vec![32, 16],
            lr: 1e-3,
            minibatch_size: 128,
            train_steps: 100,
            samples_per_refresh: 256,
            capacity: 50_000,
        }
    }
}

impl ErrorFnConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::config(format!("error_fn.{field}: {why}")));
        if self.horizon == 0 {
            return bad("T", "must be at least 1".into());
        }
        if self.representation == Representation::Projected
            && (self.latent_dim == 0 || self.latent_dim >= state_dim)
        {
            return bad("latent_dim", format!("must lie in 1..{state_dim}"));
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "layer sizes must be positive".into());
        }
        if !(self.lr > 0.0) || self.minibatch_size == 0 {
            return bad("lr", "learning rate and minibatch size must be positive".into());
        }
        if self.capacity < self.samples_per_refresh || self.samples_per_refresh == 0 {
            return bad("capacity", "must hold at least one collection round".into());
        }
        Ok(())
    }

    /// Dimension of the error input seen by the policy.
    pub fn feature_dim(&self, state_dim: usize) -> usize {
        match self.representation {
            Representation::Full => state_dim,
            Representation::Projected => self.latent_dim,
        }
    }
}

/// One paired-rollout record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample<S> {
    pub s0: Vec<S>,
    pub a0: Vec<S>,
    pub s_t_val: Vec<S>,
    pub s_t_ref: Vec<S>,
    pub mu: Vec<S>,
    /// Population index of the validation environment.
    pub source: usize,
}

impl<S: Scalar> ErrorSample<S> {
    /// Reference minus validation state after `T` steps.
    pub fn target(&self) -> Vec<S> {
        self.s_t_ref.iter().zip(&self.s_t_val).map(|(r, v)| *r - *v).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDataset<S> {
    pub capacity: usize,
    samples: VecDeque<ErrorSample<S>>,
}

impl<S: Scalar> ErrorDataset<S> {
    pub fn new(capacity: usize) -> Self {
        ErrorDataset { capacity, samples: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends with first-in-first-out eviction.
    pub fn push(&mut self, sample: ErrorSample<S>) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn get(&self, i: usize) -> &ErrorSample<S> {
        &self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ErrorSample<S>> {
        self.samples.iter()
    }

    /// Tab-separated dump for offline inspection.
    pub fn to_text(&self) -> String {
        let join = |v: &[S]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::from("source\ts0\ta0\ts_t_val\ts_t_ref\tmu\ttarget\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                s.source,
                join(&s.s0),
                join(&s.a0),
                join(&s.s_t_val),
                join(&s.s_t_ref),
                join(&s.mu),
                join(&s.target())
            ));
        }
        out
    }
}

/// Squared prediction error summed over the samples: `sum ||prediction - target||^2`.
pub fn error_loss<S: Scalar>(predictions: &[Vec<S>], targets: &[Vec<S>]) -> S {
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<S>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PredictorNet<S> {
    Full(FeedforwardNet<S>),
    Projected(BottleneckNet<S>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPredictor<S> {
    pub representation: Representation,
    pub horizon: usize,
    pub net: PredictorNet<S>,
    pub input_norm: RunningNorm<S>,
    pub target_norm: RunningNorm<S>,
    pub opt: Adam<S>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub mu_dim: usize,
}

impl<S: Scalar> ErrorPredictor<S> {
    /// The layer that emits the policy's error input starts at zero, so a fresh
    /// predictor reports no error.
    pub fn new(
        config: &ErrorFnConfig,
        state_dim: usize,
        action_dim: usize,
        mu_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        config.validate(state_dim)?;
        let input_dim = state_dim + action_dim + mu_dim;
        let gain = 2f64.sqrt();
        let net = match config.representation {
            Representation::Full => {
                let mut sizes = vec![input_dim];
                sizes.extend_from_slice(&config.hidden);
                sizes.push(state_dim);
                PredictorNet::Full(FeedforwardNet::orthogonal(&sizes, gain, 0.0, rng)?)
            }
            Representation::Projected => {
                let mut enc = vec![input_dim];
                enc.extend_from_slice(&config.hidden);
                enc.push(config.latent_dim);
                let mut dec = vec![config.latent_dim];
                dec.extend(config.hidden.iter().rev());
                dec.push(state_dim);
                PredictorNet::Projected(BottleneckNet::new(
                    FeedforwardNet::orthogonal(&enc, gain, 0.0, rng)?,
                    FeedforwardNet::orthogonal(&dec, gain, 1.0, rng)?,
                )?)
            }
        };
        let shapes = match &net {
            PredictorNet::Full(n) => n.tensor_shapes(),
            PredictorNet::Projected(n) => n.tensor_shapes(),
        };
        Ok(ErrorPredictor {
            representation: config.representation,
            horizon: config.horizon,
            net,
            input_norm: RunningNorm::new(input_dim, true),
            target_norm: RunningNorm::new(state_dim, false),
            opt: Adam::new(AdamConfig::with_lr(config.lr), &shapes),
            state_dim,
            action_dim,
            mu_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        match &self.net {
            PredictorNet::Full(_) => self.state_dim,
            PredictorNet::Projected(n) => n.latent_dim(),
        }
    }

    fn input(&self, s: &[S], a: &[S], mu: &[S]) -> Result<Vec<S>> {
        if s.len() != self.state_dim || a.len() != self.action_dim || mu.len() != self.mu_dim {
            return Err(Error::contract("error predictor input dimensions mismatch"));
        }
        let raw: Vec<S> = s.iter().chain(a).chain(mu).copied().collect();
        Ok(self.input_norm.normalize(&raw))
    }

    /// Network output in normalized-target units.
    fn normalized_output(&self, x: &[S]) -> Result<Vec<S>> {
        match &self.net {
            PredictorNet::Full(n) => n.forward(x),
            PredictorNet::Projected(n) => n.forward(x),
        }
    }

    /// Full variant: predicted state error in state units. Projected variant:
    /// the latent `e_p`.
    pub fn predict_error(&self, s: &[S], a: &[S], mu: &[S]) -> Result<Vec<S>> {
        let x = self.input(s, a, mu)?;
        match &self.net {
            PredictorNet::Full(n) => Ok(self.target_norm.denormalize(&n.forward(&x)?)),
            PredictorNet::Projected(n) => n.latent(&x),
        }
    }

    /// Reconstructed state error in state units, for either variant.
    pub fn predict_state_error(&self, s: &[S], a: &[S], mu: &[S]) -> Result<Vec<S>> {
        let x = self.input(s, a, mu)?;
        Ok(self.target_norm.denormalize(&self.normalized_output(&x)?))
    }

    /// The error input handed to the policy: the per-component normalized
    /// prediction (Full) or the latent (Projected).
    pub fn policy_features(&self, s: &[S], a: &[S], mu: &[S]) -> Result<Vec<S>> {
        let x = self.input(s, a, mu)?;
        match &self.net {
            PredictorNet::Full(n) => n.forward(&x),
            PredictorNet::Projected(n) => n.latent(&x),
        }
    }

    /// Folds new samples into the normalizer statistics.
    pub fn observe(&mut self, samples: &[ErrorSample<S>]) -> Result<()> {
        for s in samples {
            let raw: Vec<S> = s.s0.iter().chain(&s.a0).chain(&s.mu).copied().collect();
            self.input_norm.update(&raw)?;
            self.target_norm.update(&s.target())?;
        }
        Ok(())
    }

    /// Mean squared error (per sample, summed over components) in normalized
    /// target units over `indices` of `data`.
    pub fn normalized_loss(&self, data: &ErrorDataset<S>, indices: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &i in indices {
            let s = data.get(i);
            let x = self.input(&s.s0, &s.a0, &s.mu)?;
            let y = self.normalized_output(&x)?;
            let t = self.target_norm.normalize(&s.target());
            total += error_loss(&[y], &[t]).as_f64();
        }
        Ok(total / indices.len().max(1) as f64)
    }

    /// Minimizes the normalized squared error over random minibatches of `data`
    /// for `steps` gradient steps. Returns the mean minibatch loss of the last step.
    pub fn train(
        &mut self,
        data: &ErrorDataset<S>,
        steps: usize,
        minibatch: usize,
        rng: &mut RngStream,
    ) -> Result<f64> {
        if data.is_empty() || minibatch == 0 {
            return Err(Error::contract("error dataset is empty"));
        }
        let m = minibatch.min(data.len());
        let inv_m = S::lit(1.0 / m as f64);
        let in_dim = self.state_dim + self.action_dim + self.mu_dim;
        let mut xs = Vec::with_capacity(m * in_dim);
        let mut ts = Vec::with_capacity(m * self.state_dim);
        let mut last = 0.0;
        for step in 0..steps {
            xs.clear();
            ts.clear();
            for _ in 0..m {
                let s = data.get(rng.index(data.len()));
                xs.extend(self.input(&s.s0, &s.a0, &s.mu)?);
                ts.extend(self.target_norm.normalize(&s.target()));
            }
            let (out, grads, labels) = match &self.net {
                PredictorNet::Full(n) => {
                    let tape = n.forward_tape(&xs, m)?;
                    let out = tape.output().to_vec();
                    let g: Vec<S> = out.iter().zip(&ts).map(|(y, t)| S::lit(2.0) * (*y - *t) * inv_m).collect();
                    let (grads, _) = n.backward(&tape, &g)?;
                    (out, grads, n.tensor_labels())
                }
                PredictorNet::Projected(n) => {
                    let tape = n.forward_tape(&xs, m)?;
                    let out = tape.decoder.output().to_vec();
                    let g: Vec<S> = out.iter().zip(&ts).map(|(y, t)| S::lit(2.0) * (*y - *t) * inv_m).collect();
                    let (grads, _) = n.backward(&tape, &g)?;
                    (out, grads, n.tensor_labels())
                }
            };
            let loss: S = out.iter().zip(&ts).map(|(y, t)| (*y - *t) * (*y - *t)).sum::<S>() * inv_m;
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: format!("error-function loss at step {step}") });
            }
            let params = match &mut self.net {
                PredictorNet::Full(n) => n.tensors_mut(),
                PredictorNet::Projected(n) => n.tensors_mut(),
            };
            self.opt.update(params, &grads.as_slices(), &labels)?;
            last = loss.as_f64();
        }
        Ok(last)
    }

    pub fn all_finite(&self) -> bool {
        match &self.net {
            PredictorNet::Full(n) => n.all_finite(),
            PredictorNet::Projected(n) => n.all_finite(),
        }
    }
}

/// Policy queried with a zero error input, in deterministic-mean mode.
pub struct ZeroErrorPolicy<'a, S> {
    pub policy: &'a GaussianPolicyHead<S>,
    pub scaler: &'a ParamScaler,
    pub e_dim: usize,
}

impl<S: Scalar> ZeroErrorPolicy<'_, S> {
    pub fn mean_action(&self, s: &[S], mu: &[S]) -> Result<Vec<S>> {
        let mut obs: Vec<S> = s.to_vec();
        obs.extend(self.scaler.mu(mu));
        obs.extend(std::iter::repeat(S::zero()).take(self.e_dim));
        self.policy.mean(&obs)
    }
}

/// Outcome of one paired-rollout collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection<S> {
    pub samples: Vec<ErrorSample<S>>,
    pub skipped: usize,
    /// Environment steps consumed across both simulators.
    pub env_steps: u64,
}

/// Paired T-step rollouts from states drawn out of `start_states`: the
/// reference environment is driven with `pi(s, mu_0, 0)`, the validation
/// environment with `pi(s, mu, 0)`, both in mean-action mode. Actions are
/// recorded in policy units.
pub fn collect_error_data<S: Scalar>(
    policy: &ZeroErrorPolicy<'_, S>,
    reference: &mut EnvInstance<S>,
    validation: &mut EnvInstance<S>,
    validation_index: usize,
    start_states: &[Vec<S>],
    horizon: usize,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Collection<S>> {
    if start_states.is_empty() {
        return Err(Error::contract("no start states to draw paired rollouts from"));
    }
    if horizon == 0 {
        return Err(Error::contract("error horizon must be at least 1"));
    }
    let mu_ref = reference.params().mu.clone();
    let mu_val = validation.params().mu.clone();
    let mut out = Collection { samples: Vec::with_capacity(n_samples), skipped: 0, env_steps: 0 };
    for _ in 0..n_samples {
        let s0 = &start_states[rng.index(start_states.len())];
        if reference.set_state(s0).is_err() || validation.set_state(s0).is_err() {
            out.skipped += 1;
            continue;
        }
        let mut s_ref = s0.clone();
        let mut s_val = s0.clone();
        let mut a0 = Vec::new();
        for t in 0..horizon {
            let a_ref = policy.mean_action(&s_ref, &mu_ref)?;
            s_ref = reference.advance_raw(&reference.descriptor().scale_action(&a_ref))?;
            let a_val = policy.mean_action(&s_val, &mu_val)?;
            s_val = validation.advance_raw(&validation.descriptor().scale_action(&a_val))?;
            if t == 0 {
                a0 = a_val;
            }
        }
        out.env_steps += 2 * horizon as u64;
        let sample = ErrorSample {
            s0: s0.clone(),
            a0,
            s_t_val: s_val,
            s_t_ref: s_ref,
            mu: mu_val.clone(),
            source: validation_index,
        };
        if !sample.target().iter().all(|v| v.is_finite()) {
            out.skipped += 1;
            continue;
        }
        out.samples.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(target: [f64; 2]) -> ErrorSample<f64> {
        ErrorSample {
            s0: vec![0.0; 2],
            a0: vec![0.0],
            s_t_val: vec![0.0; 2],
            s_t_ref: target.to_vec(),
            mu: vec![],
            source: 0,
        }
    }

    #[test]
    fn loss_is_zero_at_targets_and_one_for_unit_offset() {
        let t = vec![vec![0.3f64, -1.2], vec![2.0, 0.5]];
        assert_eq!(error_loss(&t, &t), 0.0);
        let p = vec![vec![0.3 + 0.6, -1.2 + 0.8]];
        assert!((error_loss(&p, &t[..1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_evicts_oldest() {
        let mut d = ErrorDataset::new(3);
        for k in 0..5 {
            d.push(sample([k as f64, 0.0]));
        }
        assert_eq!(d.len(), 3);
        assert_eq!(d.get(0).target()[0], 2.0);
        assert_eq!(d.get(2).target()[0], 4.0);
    }

    #[test]
    fn fresh_predictor_reports_zero() {
        for rep in [Representation::Full, Representation::Projected] {
            let config = ErrorFnConfig { representation: rep, ..ErrorFnConfig::default() };
            let p = ErrorPredictor::<f64>::new(&config, 4, 1, 3, &mut RngStream::from_seed(1)).unwrap();
            let e = p.predict_error(&[0.1, 0.2, 0.3, 0.4], &[1.0], &[0.5, 0.1, 1.0]).unwrap();
            assert_eq!(e.len(), config.feature_dim(4));
            assert!(e.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn latent_must_be_narrower_than_state() {
        let config = ErrorFnConfig { latent_dim: 4, ..ErrorFnConfig::default() };
        assert!(config.validate(4).is_err());
    }
}
