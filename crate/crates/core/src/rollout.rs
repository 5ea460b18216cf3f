//! Rollout generation: the per-step query chain run against one environment.

use crate::agent::{ActionMode, Agent, ErrorMode};
use crate::env::EnvInstance;
use crate::error::Result;
use crate::ppo::Transition;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch<S> {
    pub transitions: Vec<Transition<S>>,
    /// Returns of episodes that ended inside the batch.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    /// Non-finite error inputs replaced by zeros.
    pub faults: usize,
    /// Actions clipped to the action bounds.
    pub clipped: usize,
}

impl<S> RolloutBatch<S> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Mean completed-episode return, if any episode completed.
    pub fn mean_return(&self) -> Option<f64> {
        if self.episode_returns.is_empty() {
            None
        } else {
            Some(self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64)
        }
    }

    pub fn states(&self) -> Vec<Vec<S>>
    where
        S: Clone,
    {
        self.transitions.iter().map(|t| t.state.clone()).collect()
    }
}

/// Collects exactly `n_steps` transitions from fresh episodes of `env`,
/// resetting whenever an episode ends. Universal policies see the
/// environment's true `nu` during training.
pub fn generate_rollouts<S: Scalar>(
    agent: &Agent<S>,
    env: &mut EnvInstance<S>,
    n_steps: usize,
    errors: ErrorMode,
    policy_rng: &mut RngStream,
    uncorrected_rng: &mut RngStream,
) -> Result<RolloutBatch<S>> {
    let mu = env.params().mu.clone();
    let nu = env.params().nu.clone();
    let mut batch = RolloutBatch {
        transitions: Vec::with_capacity(n_steps),
        episode_returns: Vec::new(),
        episode_lengths: Vec::new(),
        faults: 0,
        clipped: 0,
    };
    let mut s = env.reset();
    let mut ep_return = 0.0;
    for step in 0..n_steps {
        let d = agent.decide(&s, &mu, &nu, errors, ActionMode::Sample, policy_rng, uncorrected_rng)?;
        if d.fault {
            batch.faults += 1;
        }
        let scaled = env.descriptor().scale_action(&d.action);
        let out = env.step(&scaled)?;
        if out.clipped {
            batch.clipped += 1;
        }
        ep_return += out.reward.as_f64();
        let last = step + 1 == n_steps;
        let cut = out.truncated || (last && !out.done);
        let bootstrap_obs = if cut {
            Some(agent.observation_at(&out.next_state, &mu, &nu, errors)?)
        } else {
            None
        };
        batch.transitions.push(Transition {
            obs: d.obs,
            state: s,
            mu: mu.clone(),
            action: d.action,
            reward: out.reward,
            next_state: out.next_state.clone(),
            log_prob: d.log_prob,
            done: out.done,
            cut,
            bootstrap_obs,
        });
        if out.done || out.truncated {
            batch.episode_returns.push(ep_return);
            batch.episode_lengths.push(env.step_count());
            ep_return = 0.0;
            if !last {
                s = env.reset();
            } else {
                s = out.next_state;
            }
        } else {
            s = out.next_state;
        }
    }
    Ok(batch)
}
