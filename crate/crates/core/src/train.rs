//! Training loops: reference pretraining and the error-aware outer loop, and
//! the randomized baselines, all under one environment-step budget.

use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, ErrorMode, Method};
use crate::env::{DynamicsParams, EnvDescriptor, EnvInstance, EnvPopulation, TaskKind};
use crate::error::{Error, Result};
use crate::errorfn::{collect_error_data, ErrorDataset, ErrorFnConfig, ZeroErrorPolicy};
use crate::ppo::{PpoConfig, UpdateStats};
use crate::rng::{RngStream, StreamName};
use crate::rollout::{generate_rollouts, RolloutBatch};
use crate::scalar::Scalar;

/// Mean return at which reference pretraining stops: 90% of the normalized
/// return scale for CartPole and Pendulum, two thirds of the step limit for
/// the hopper.
pub fn default_pretrain_threshold(kind: TaskKind) -> f64 {
    match kind {
        TaskKind::CartPole => 450.0,
        TaskKind::Pendulum => -460.0,
        TaskKind::Hopper => 200.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    /// Policy and value hidden layer sizes.
    pub hidden: Vec<usize>,
    /// Environment steps from every source: pretraining, policy rollouts and
    /// paired error rollouts.
    pub budget_steps: u64,
    /// Cap on outer iterations after pretraining; -1 means budget-bound only.
    pub max_iterations: i64,
    pub pretrain_max_steps: u64,
    pub pretrain_threshold: f64,
}

impl TrainSettings {
    pub fn for_task(kind: TaskKind) -> Self {
        TrainSettings {
            hidden: vec![32, 16],
            budget_steps: 1_000_000,
            max_iterations: -1,
            pretrain_max_steps: 300_000,
            pretrain_threshold: default_pretrain_threshold(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("train.hidden: need at least one positive layer size"));
        }
        if self.budget_steps == 0 {
            return Err(Error::config("train.budget_steps: must be positive"));
        }
        if self.max_iterations < -1 {
            return Err(Error::config("train.max_iterations: must be -1 or non-negative"));
        }
        if !self.pretrain_threshold.is_finite() {
            return Err(Error::config("train.pretrain_threshold: must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Main,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Main => "main",
            Phase::Done => "done",
        }
    }
}

/// Environment steps consumed, by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleAccount {
    pub pretrain_steps: u64,
    pub policy_steps: u64,
    /// Paired error rollouts, both simulators counted.
    pub error_steps: u64,
}

impl SampleAccount {
    pub fn total(&self) -> u64 {
        self.pretrain_steps + self.policy_steps + self.error_steps
    }
}

/// Named random streams owned by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerStreams {
    pub selection: RngStream,
    pub policy: RngStream,
    pub uncorrected: RngStream,
    pub minibatch: RngStream,
    pub error_data: RngStream,
}

impl TrainerStreams {
    pub fn new(seed: u64) -> Self {
        TrainerStreams {
            selection: RngStream::child(seed, StreamName::EnvSelection),
            policy: RngStream::child(seed, StreamName::PolicySampling),
            uncorrected: RngStream::child(seed, StreamName::UncorrectedAction),
            minibatch: RngStream::child(seed, StreamName::Minibatch),
            error_data: RngStream::child(seed, StreamName::ErrorData),
        }
    }
}

/// Environment instance for one update; its dynamics stream depends only on
/// the seed and the update index.
pub fn env_for_update<S: Scalar>(
    descriptor: &Arc<EnvDescriptor>,
    params: &DynamicsParams<f64>,
    seed: u64,
    label: &str,
    update: usize,
) -> Result<EnvInstance<S>> {
    EnvInstance::new(
        descriptor.clone(),
        params.cast(),
        RngStream::derive(seed, label, update as u64),
    )
}

/// One row of the per-update metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub phase: String,
    pub method: String,
    /// Population index of the environment trained on; -1 for the reference.
    pub env_index: i64,
    pub validation_index: i64,
    pub pretrain_steps: u64,
    pub policy_steps: u64,
    pub error_steps: u64,
    pub total_steps: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_run: usize,
    pub error_loss: f64,
    pub error_samples: usize,
    pub error_dataset: usize,
    pub faults: usize,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Complete, serializable state of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer<S> {
    pub method: Method,
    pub seed: u64,
    pub settings: TrainSettings,
    pub ppo: PpoConfig,
    pub error_fn: ErrorFnConfig,
    pub descriptor: EnvDescriptor,
    pub population: EnvPopulation,
    pub agent: Agent<S>,
    pub dataset: Option<ErrorDataset<S>>,
    pub phase: Phase,
    pub updates: usize,
    pub iterations: usize,
    pub samples: SampleAccount,
    pub pretrain_reached: bool,
    pub last_return: Option<f64>,
    pub faults: usize,
    pub error_skips: usize,
    pub streams: TrainerStreams,
    /// States visited by the latest rollout batch; start states for paired rollouts.
    last_states: Vec<Vec<S>>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(
        method: Method,
        seed: u64,
        settings: TrainSettings,
        ppo: PpoConfig,
        error_fn: ErrorFnConfig,
        descriptor: EnvDescriptor,
        population: EnvPopulation,
    ) -> Result<Self> {
        settings.validate()?;
        ppo.validate()?;
        descriptor.validate()?;
        population.check_layout(&descriptor)?;
        if method == Method::Eap {
            error_fn.validate(descriptor.state_dim)?;
            if population.validation().is_empty() {
                return Err(Error::config("the error-aware method needs validation environments"));
            }
        }
        if population.training().is_empty() {
            return Err(Error::config("population has no training environments"));
        }
        let mut init = RngStream::child(seed, StreamName::Init);
        let agent = Agent::new(method, &descriptor, &settings.hidden, &ppo, &error_fn, &mut init)?;
        let dataset = (method == Method::Eap).then(|| ErrorDataset::new(error_fn.capacity));
        let phase = if method == Method::Eap { Phase::Pretrain } else { Phase::Main };
        Ok(Trainer {
            method,
            seed,
            settings,
            ppo,
            error_fn,
            descriptor,
            population,
            agent,
            dataset,
            phase,
            updates: 0,
            iterations: 0,
            samples: SampleAccount::default(),
            pretrain_reached: false,
            last_return: None,
            faults: 0,
            error_skips: 0,
            streams: TrainerStreams::new(seed),
            last_states: Vec::new(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn remaining(&self) -> u64 {
        self.settings.budget_steps.saturating_sub(self.samples.total())
    }

    /// Runs one update. Returns `None` once training is complete.
    pub fn advance(&mut self) -> Result<Option<MetricsRow>> {
        loop {
            match self.phase {
                Phase::Done => return Ok(None),
                Phase::Pretrain => {
                    if let Some(row) = self.pretrain_update()? {
                        return Ok(Some(row));
                    }
                }
                Phase::Main => {
                    if let Some(row) = self.main_update()? {
                        return Ok(Some(row));
                    }
                }
            }
        }
    }

    /// Runs to completion, handing every metrics row to `on_update`.
    pub fn run(&mut self, mut on_update: impl FnMut(&Self, &MetricsRow) -> Result<()>) -> Result<()> {
        while let Some(row) = self.advance()? {
            on_update(self, &row)?;
        }
        Ok(())
    }

    fn pretrain_update(&mut self) -> Result<Option<MetricsRow>> {
        let left = self
            .settings
            .pretrain_max_steps
            .saturating_sub(self.samples.pretrain_steps)
            .min(self.remaining());
        let n = (self.ppo.rollout_steps as u64).min(left) as usize;
        if n < self.ppo.minibatch_size {
            warn!(
                "reference pretraining stopped at {} steps below the return threshold {}",
                self.samples.pretrain_steps, self.settings.pretrain_threshold
            );
            self.phase = Phase::Main;
            return Ok(None);
        }
        let descriptor = Arc::new(self.descriptor.clone());
        let reference = self.population.reference_params(&self.descriptor);
        let mut env = env_for_update::<S>(&descriptor, &reference, self.seed, "reference", self.updates)?;
        let batch = generate_rollouts(
            &self.agent,
            &mut env,
            n,
            ErrorMode::Zero,
            &mut self.streams.policy,
            &mut self.streams.uncorrected,
        )?;
        self.samples.pretrain_steps += n as u64;
        let stats = self.agent.ac.update(&batch.transitions, &self.ppo, &mut self.streams.minibatch)?;
        let row = self.row(-1, -1, &batch, &stats, f64::NAN, 0);
        self.last_states = batch.states();
        self.last_return = batch.mean_return();
        self.updates += 1;
        if batch.mean_return().is_some_and(|r| r >= self.settings.pretrain_threshold) {
            info!(
                "reference pretraining reached {:.1} after {} steps",
                batch.mean_return().unwrap_or(f64::NAN),
                self.samples.pretrain_steps
            );
            self.pretrain_reached = true;
            self.phase = Phase::Main;
        }
        Ok(Some(row))
    }

    fn main_update(&mut self) -> Result<Option<MetricsRow>> {
        if self.settings.max_iterations >= 0 && self.iterations as i64 >= self.settings.max_iterations {
            self.phase = Phase::Done;
            return Ok(None);
        }
        let error_cost = if self.method == Method::Eap {
            2 * (self.error_fn.horizon * self.error_fn.samples_per_refresh) as u64
        } else {
            0
        };
        if self.remaining() < error_cost + self.ppo.minibatch_size as u64 {
            self.phase = Phase::Done;
            return Ok(None);
        }
        let training = self.population.training();
        let env_index = training[self.streams.selection.index(training.len())];
        let descriptor = Arc::new(self.descriptor.clone());

        let (mut val_index, mut error_loss, mut error_samples) = (-1i64, f64::NAN, 0usize);
        if self.method == Method::Eap {
            let validation = self.population.validation();
            let v = validation[self.streams.selection.index(validation.len())];
            val_index = v as i64;
            let (loss, added) = self.refresh_error_fn(&descriptor, v)?;
            error_loss = loss;
            error_samples = added;
        }

        let n = (self.ppo.rollout_steps as u64).min(self.remaining()) as usize;
        if n < self.ppo.minibatch_size {
            self.phase = Phase::Done;
            return Ok(None);
        }
        let params = self.population.params(&self.descriptor, env_index);
        let mut env = env_for_update::<S>(&descriptor, &params, self.seed, "train", self.updates)?;
        let batch = generate_rollouts(
            &self.agent,
            &mut env,
            n,
            ErrorMode::Predicted,
            &mut self.streams.policy,
            &mut self.streams.uncorrected,
        )?;
        self.samples.policy_steps += n as u64;
        self.faults += batch.faults;
        let stats = self.agent.ac.update(&batch.transitions, &self.ppo, &mut self.streams.minibatch)?;
        let row = self.row(env_index as i64, val_index, &batch, &stats, error_loss, error_samples);
        self.last_states = batch.states();
        self.last_return = batch.mean_return();
        self.updates += 1;
        self.iterations += 1;
        Ok(Some(row))
    }

    /// Paired rollouts against validation entry `v`, then a regression pass.
    fn refresh_error_fn(&mut self, descriptor: &Arc<EnvDescriptor>, v: usize) -> Result<(f64, usize)> {
        let reference = self.population.reference_params(&self.descriptor);
        let val_params = self.population.params(&self.descriptor, v);
        let mut ref_env = env_for_update::<S>(descriptor, &reference, self.seed, "error-reference", self.updates)?;
        let mut val_env = env_for_update::<S>(descriptor, &val_params, self.seed, "error-validation", self.updates)?;
        if self.last_states.is_empty() {
            self.last_states = vec![ref_env.reset()];
        }
        let predictor = self.agent.predictor.as_mut().ok_or_else(|| Error::contract("missing predictor"))?;
        let policy = ZeroErrorPolicy {
            policy: &self.agent.ac.policy,
            scaler: &self.agent.scaler,
            e_dim: self.agent.e_dim,
        };
        let collected = collect_error_data(
            &policy,
            &mut ref_env,
            &mut val_env,
            v,
            &self.last_states,
            self.error_fn.horizon,
            self.error_fn.samples_per_refresh,
            &mut self.streams.error_data,
        )?;
        self.samples.error_steps += collected.env_steps;
        self.error_skips += collected.skipped;
        predictor.observe(&collected.samples)?;
        let dataset = self.dataset.as_mut().ok_or_else(|| Error::contract("missing error dataset"))?;
        let added = collected.samples.len();
        for s in collected.samples {
            dataset.push(s);
        }
        let loss = if dataset.is_empty() || self.error_fn.train_steps == 0 {
            f64::NAN
        } else {
            predictor.train(
                dataset,
                self.error_fn.train_steps,
                self.error_fn.minibatch_size,
                &mut self.streams.error_data,
            )?
        };
        Ok((loss, added))
    }

    fn row(
        &self,
        env_index: i64,
        validation_index: i64,
        batch: &RolloutBatch<S>,
        stats: &UpdateStats,
        error_loss: f64,
        error_samples: usize,
    ) -> MetricsRow {
        MetricsRow {
            update: self.updates,
            phase: self.phase.name().to_string(),
            method: self.method.name().to_string(),
            env_index,
            validation_index,
            pretrain_steps: self.samples.pretrain_steps,
            policy_steps: self.samples.policy_steps,
            error_steps: self.samples.error_steps,
            total_steps: self.samples.total(),
            episodes: batch.episode_returns.len(),
            mean_return: batch.mean_return().unwrap_or(f64::NAN),
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            epochs_run: stats.epochs_run,
            error_loss,
            error_samples,
            error_dataset: self.dataset.as_ref().map_or(0, |d| d.len()),
            faults: self.faults,
        }
    }
}
