//! Clipped-surrogate policy optimization with generalized advantage estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, AdamConfig, FeedforwardNet, GaussianPolicyHead};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Value-network output-layer gain.
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub rollout_steps: usize,
    /// Epoch loop stops once a minibatch's approximate KL exceeds this; 0 disables.
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            epochs: 10,
            minibatch_size: 64,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            rollout_steps: 4096,
            target_kl: 0.05,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::config(format!("ppo.{field}: {why}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon", "must be positive");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("policy_lr", "learning rates must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_steps < self.minibatch_size {
            return bad("rollout_steps", "need epochs >= 1 and rollout_steps >= minibatch_size >= 1");
        }
        if !(self.max_grad_norm > 0.0) || self.entropy_coef < 0.0 || self.target_kl < 0.0 {
            return bad("max_grad_norm", "clip norm must be positive; entropy_coef and target_kl non-negative");
        }
        Ok(())
    }
}

/// One step of experience. `obs` is the exact policy input used when acting,
/// so importance ratios can be recomputed; the critic reads the same vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub obs: Vec<S>,
    pub state: Vec<S>,
    pub mu: Vec<S>,
    pub action: Vec<S>,
    pub reward: S,
    pub next_state: Vec<S>,
    pub log_prob: S,
    pub done: bool,
    /// The trajectory continues past this step in time but the next stored
    /// transition does not follow it (step limit or end of the buffer).
    pub cut: bool,
    /// Policy input at `next_state`, present when `cut` holds and `done` does not.
    pub bootstrap_obs: Option<Vec<S>>,
}

/// Generalized advantage estimates over a time-ordered trajectory.
///
/// `next_values[t]` is the critic value of the successor state; it is ignored
/// where `dones[t]`. `ends[t]` marks the last step before a discontinuity.
pub fn compute_gae<S: Scalar>(
    rewards: &[S],
    values: &[S],
    next_values: &[S],
    dones: &[bool],
    ends: &[bool],
    gamma: S,
    lambda: S,
) -> Result<(Vec<S>, Vec<S>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::contract("advantage estimation on an empty trajectory"));
    }
    if [values.len(), next_values.len(), dones.len(), ends.len()].iter().any(|&l| l != n) {
        return Err(Error::contract("trajectory arrays differ in length"));
    }
    let mut adv = vec![S::zero(); n];
    let mut running = S::zero();
    for t in (0..n).rev() {
        let not_done = if dones[t] { S::zero() } else { S::one() };
        let delta = rewards[t] + gamma * next_values[t] * not_done - values[t];
        if dones[t] || ends[t] {
            running = S::zero();
        }
        running = delta + gamma * lambda * not_done * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-variance rescaling. Constant inputs map to zero.
pub fn normalize_advantages<S: Scalar>(adv: &mut [S]) {
    let n = S::lit(adv.len() as f64);
    let mean = adv.iter().copied().sum::<S>() / n;
    let var = adv.iter().map(|a| (*a - mean) * (*a - mean)).sum::<S>() / n;
    let std = var.sqrt() + S::lit(1e-8);
    for a in adv {
        *a = (*a - mean) / std;
    }
}

/// `min(rho * a, clip(rho, 1 - eps, 1 + eps) * a)` and whether the unclipped
/// branch carries the gradient.
pub fn clipped_term<S: Scalar>(ratio: S, advantage: S, eps: S) -> (S, bool) {
    let clipped = ratio.max(S::one() - eps).min(S::one() + eps);
    let raw = ratio * advantage;
    let capped = clipped * advantage;
    if raw <= capped {
        (raw, true)
    } else {
        (capped, false)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
}

/// Policy, critic and their optimizer states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic<S> {
    pub policy: GaussianPolicyHead<S>,
    pub value: FeedforwardNet<S>,
    pub policy_opt: Adam<S>,
    pub value_opt: Adam<S>,
}

impl<S: Scalar> ActorCritic<S> {
    pub fn new(
        obs_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        config: &PpoConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let policy = GaussianPolicyHead::new(obs_dim, hidden, action_dim, rng)?;
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let value = FeedforwardNet::orthogonal(&sizes, 2f64.sqrt(), VALUE_OUTPUT_GAIN, rng)?;
        let policy_opt = Adam::new(AdamConfig::with_lr(config.policy_lr), &policy.tensor_shapes());
        let value_opt = Adam::new(AdamConfig::with_lr(config.value_lr), &value.tensor_shapes());
        Ok(ActorCritic { policy, value, policy_opt, value_opt })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.obs_dim()
    }

    /// Critic values for a batch of row-major observations.
    pub fn values(&self, obs: &[S], batch: usize) -> Result<Vec<S>> {
        Ok(self.value.forward_tape(obs, batch)?.output().to_vec())
    }

    /// Advantages and returns for a buffer of transitions, before normalization.
    pub fn advantages(&self, buffer: &[Transition<S>], config: &PpoConfig) -> Result<(Vec<S>, Vec<S>)> {
        let n = buffer.len();
        if n == 0 {
            return Err(Error::contract("advantage estimation on an empty buffer"));
        }
        let obs: Vec<S> = buffer.iter().flat_map(|t| t.obs.iter().copied()).collect();
        let values = self.values(&obs, n)?;
        let boot: Vec<S> = buffer
            .iter()
            .filter_map(|t| t.bootstrap_obs.as_ref())
            .flat_map(|o| o.iter().copied())
            .collect();
        let boot_count = buffer.iter().filter(|t| t.bootstrap_obs.is_some()).count();
        let boot_values = if boot_count > 0 { self.values(&boot, boot_count)? } else { Vec::new() };
        let mut boot_iter = boot_values.into_iter();
        let mut next_values = vec![S::zero(); n];
        for (t, tr) in buffer.iter().enumerate() {
            if tr.bootstrap_obs.is_some() {
                next_values[t] = boot_iter.next().unwrap_or_else(S::zero);
            } else if !tr.done && !tr.cut && t + 1 < n {
                next_values[t] = values[t + 1];
            }
        }
        let rewards: Vec<S> = buffer.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = buffer.iter().map(|t| t.done).collect();
        let ends: Vec<bool> = buffer
            .iter()
            .enumerate()
            .map(|(t, tr)| tr.cut || t + 1 == n)
            .collect();
        compute_gae(
            &rewards,
            &values,
            &next_values,
            &dones,
            &ends,
            S::lit(config.gamma),
            S::lit(config.gae_lambda),
        )
    }

    /// One clipped-surrogate update over `buffer`.
    pub fn update(
        &mut self,
        buffer: &[Transition<S>],
        config: &PpoConfig,
        rng: &mut RngStream,
    ) -> Result<UpdateStats> {
        let n = buffer.len();
        if n < config.minibatch_size {
            return Err(Error::contract(format!(
                "buffer of {n} transitions is smaller than one minibatch ({})",
                config.minibatch_size
            )));
        }
        let obs_dim = self.obs_dim();
        let act_dim = self.policy.action_dim();
        if buffer.iter().any(|t| t.obs.len() != obs_dim || t.action.len() != act_dim) {
            return Err(Error::contract("transition shapes disagree with the policy"));
        }
        if buffer.iter().any(|t| !t.log_prob.is_finite()) {
            return Err(Error::NonFinite { what: "stored log probability".into() });
        }
        self.policy_opt.set_lr(config.policy_lr);
        self.value_opt.set_lr(config.value_lr);

        let (mut adv, returns) = self.advantages(buffer, config)?;
        normalize_advantages(&mut adv);

        let eps = S::lit(config.clip_epsilon);
        let ent_coef = S::lit(config.entropy_coef);
        let max_norm = S::lit(config.max_grad_norm);
        let policy_labels = self.policy.tensor_labels();
        let value_labels = self.value.tensor_labels();

        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let (mut surr_sum, mut vloss_sum, mut clip_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        let mut mb_obs = Vec::with_capacity(config.minibatch_size * obs_dim);
        let mut mb_act = Vec::with_capacity(config.minibatch_size * act_dim);

        'epochs: for _ in 0..config.epochs {
            rng.shuffle(&mut order);
            stats.epochs_run += 1;
            for (mb_index, chunk) in order.chunks(config.minibatch_size).enumerate() {
                if chunk.len() < config.minibatch_size {
                    continue;
                }
                let m = chunk.len();
                let inv_m = S::lit(1.0 / m as f64);
                mb_obs.clear();
                mb_act.clear();
                for &i in chunk {
                    mb_obs.extend_from_slice(&buffer[i].obs);
                    mb_act.extend_from_slice(&buffer[i].action);
                }

                let tape = self.policy.mean_net.forward_tape(&mb_obs, m)?;
                let new_lp = self.policy.batch_log_probs(&tape, &mb_act);
                let mut weights = Vec::with_capacity(m);
                let (mut surr, mut kl, mut clipped) = (S::zero(), S::zero(), 0usize);
                for (k, &i) in chunk.iter().enumerate() {
                    let log_ratio = new_lp[k] - buffer[i].log_prob;
                    let ratio = log_ratio.exp();
                    let (term, active) = clipped_term(ratio, adv[i], eps);
                    surr += term;
                    kl += -log_ratio;
                    if (ratio - S::one()).abs() > eps {
                        clipped += 1;
                    }
                    // Descent on the negated objective.
                    weights.push(if active { -ratio * adv[i] * inv_m } else { S::zero() });
                }
                surr *= inv_m;
                kl *= inv_m;
                if !surr.is_finite() || !kl.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("surrogate loss in minibatch {mb_index} of epoch {}", stats.epochs_run),
                    });
                }
                if config.target_kl > 0.0 && kl.as_f64() > config.target_kl {
                    stats.early_stopped = true;
                    break 'epochs;
                }

                let mut pg = self.policy.log_prob_gradients(&tape, &mb_act, &weights, -ent_coef)?;
                pg.clip_global_norm(max_norm);
                self.policy_opt
                    .update(self.policy.tensors_mut(), &pg.as_slices(), &policy_labels)?;
                self.policy.clamp_log_std();

                let vtape = self.value.forward_tape(&mb_obs, m)?;
                let mut vloss = S::zero();
                let mut vgrad = Vec::with_capacity(m);
                for (k, &i) in chunk.iter().enumerate() {
                    let diff = vtape.output()[k] - returns[i];
                    vloss += diff * diff * inv_m;
                    vgrad.push(S::lit(2.0) * diff * inv_m);
                }
                if !vloss.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("value loss in minibatch {mb_index} of epoch {}", stats.epochs_run),
                    });
                }
                let (mut vg, _) = self.value.backward(&vtape, &vgrad)?;
                vg.clip_global_norm(max_norm);
                self.value_opt
                    .update(self.value.tensors_mut(), &vg.as_slices(), &value_labels)?;

                surr_sum += surr.as_f64();
                vloss_sum += vloss.as_f64();
                clip_sum += clipped as f64 / m as f64;
                batches += 1;
            }
        }

        if batches > 0 {
            stats.surrogate = surr_sum / batches as f64;
            stats.value_loss = vloss_sum / batches as f64;
            stats.clip_fraction = clip_sum / batches as f64;
        }
        stats.entropy = self.policy.entropy().as_f64();
        stats.approx_kl = self.approx_kl(buffer)?;
        Ok(stats)
    }

    /// Mean of `stored - current` log probability over the buffer.
    pub fn approx_kl(&self, buffer: &[Transition<S>]) -> Result<f64> {
        let n = buffer.len();
        let obs: Vec<S> = buffer.iter().flat_map(|t| t.obs.iter().copied()).collect();
        let act: Vec<S> = buffer.iter().flat_map(|t| t.action.iter().copied()).collect();
        let tape = self.policy.mean_net.forward_tape(&obs, n)?;
        let lp = self.policy.batch_log_probs(&tape, &act);
        let sum: f64 = buffer.iter().zip(&lp).map(|(t, l)| (t.log_prob - *l).as_f64()).sum();
        Ok(sum / n as f64)
    }
}
