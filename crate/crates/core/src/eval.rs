//! Zero-shot evaluation on held-out environments and cross-method comparison.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{ActionMode, Agent, ErrorMode, Method, NuInput};
use crate::env::{EnvDescriptor, EnvInstance, EnvPopulation, TaskKind};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::train::SampleAccount;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub mode: ActionMode,
    pub nu_input: NuInput,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { episodes: 20, mode: ActionMode::Mean, nu_input: NuInput::Midpoint, seed: 0 }
    }
}

/// Maps raw returns linearly so `worst -> 0` and `best -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnScale {
    pub worst: f64,
    pub best: f64,
}

impl ReturnScale {
    /// CartPole: mean return over the maximum (`max_steps` at reward 1).
    /// Pendulum: worst is the return of a policy that applies no torque from
    /// the hanging start; best is the optimal swing-up return.
    pub fn for_descriptor(descriptor: &EnvDescriptor) -> Self {
        match descriptor.kind {
            TaskKind::CartPole => ReturnScale { worst: 0.0, best: descriptor.max_steps as f64 },
            TaskKind::Pendulum => ReturnScale { worst: PENDULUM_WORST, best: PENDULUM_BEST },
            TaskKind::Hopper => ReturnScale { worst: 0.0, best: descriptor.max_steps as f64 },
        }
    }

    pub fn normalize(&self, r: f64) -> f64 {
        (r - self.worst) / (self.best - self.worst)
    }
}

/// Mean return of a zero-torque pendulum over the hanging start distribution.
pub const PENDULUM_WORST: f64 = -1939.0;
/// Optimal return from the hanging starts, by dynamic programming over a
/// 481 x 361 (angle, velocity) grid with 33 torque levels.
pub const PENDULUM_BEST: f64 = -298.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvEval {
    pub index: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_length: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub task: String,
    pub population_hash: String,
    pub episodes_per_env: usize,
    pub mode: ActionMode,
    pub nu_input: NuInput,
    pub scale: ReturnScale,
    pub envs: Vec<EnvEval>,
    pub mean_return: f64,
    pub normalized_return: f64,
    pub samples: SampleAccount,
}

/// Runs a frozen agent for `episodes` episodes on each listed environment.
/// The error-aware method runs its full query chain; universal policies see
/// `nu` per `config.nu_input`.
pub fn evaluate_zero_shot<S: Scalar>(
    agent: &Agent<S>,
    descriptor: &EnvDescriptor,
    population: &EnvPopulation,
    indices: &[usize],
    config: &EvalConfig,
    samples: SampleAccount,
) -> Result<EvalReport> {
    if indices.is_empty() || config.episodes == 0 {
        return Err(Error::contract("evaluation needs at least one environment and episode"));
    }
    let scale = ReturnScale::for_descriptor(descriptor);
    let descriptor_arc = Arc::new(descriptor.clone());
    let mut envs = Vec::with_capacity(indices.len());
    for &index in indices {
        let params = population.params(descriptor, index);
        let mut env = EnvInstance::<S>::new(
            descriptor_arc.clone(),
            params.cast(),
            RngStream::derive(config.seed, "evaluation-env", index as u64),
        )?;
        let mut policy_rng = RngStream::derive(config.seed, "evaluation-policy", index as u64);
        let mut uncorrected_rng = RngStream::derive(config.seed, "evaluation-uncorrected", index as u64);
        let mu = env.params().mu.clone();
        let nu = match config.nu_input {
            NuInput::Oracle => env.params().nu.clone(),
            NuInput::Midpoint => agent.scaler.nu_midpoint(),
        };
        let mut returns = Vec::with_capacity(config.episodes);
        let mut lengths = Vec::with_capacity(config.episodes);
        for _ in 0..config.episodes {
            let mut s = env.reset();
            let mut total = 0.0;
            loop {
                let d = agent.decide(
                    &s,
                    &mu,
                    &nu,
                    ErrorMode::Predicted,
                    config.mode,
                    &mut policy_rng,
                    &mut uncorrected_rng,
                )?;
                let out = env.step(&descriptor.scale_action(&d.action))?;
                total += out.reward.as_f64();
                s = out.next_state;
                if out.done || out.truncated {
                    break;
                }
            }
            returns.push(total);
            lengths.push(env.step_count() as f64);
        }
        let (mean, std) = mean_std(&returns);
        envs.push(EnvEval {
            index,
            mean_return: mean,
            std_return: std,
            mean_length: mean_std(&lengths).0,
            normalized: scale.normalize(mean),
        });
    }
    let mean_return = envs.iter().map(|e| e.mean_return).sum::<f64>() / envs.len() as f64;
    Ok(EvalReport {
        method: agent.method,
        task: descriptor.name.clone(),
        population_hash: population.hash(),
        episodes_per_env: config.episodes,
        mode: config.mode,
        nu_input: config.nu_input,
        scale,
        envs,
        mean_return,
        normalized_return: scale.normalize(mean_return),
        samples,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(a - b) / b`.
pub fn relative_improvement(a: f64, b: f64) -> f64 {
    (a - b) / b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub nu_input: NuInput,
    pub seeds: usize,
    pub normalized_mean: f64,
    pub normalized_std: f64,
    pub mean_total_steps: f64,
    pub mean_error_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub method: Method,
    pub over: Method,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAudit {
    /// Every error-aware run's total includes its paired-rollout steps.
    pub error_steps_included: bool,
    pub min_total: u64,
    pub max_total: u64,
    /// `(max - min) / max` over all runs.
    pub spread: f64,
    pub within_one_percent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub population_hash: String,
    pub summaries: Vec<MethodSummary>,
    pub improvements: Vec<Improvement>,
    pub ranking: Vec<Method>,
    pub audit: BudgetAudit,
}

/// Aggregates per-seed reports by method and derives relative improvements.
/// Reports from different populations are refused.
pub fn compare_methods(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("no reports to compare"))?;
    if let Some(r) = reports.iter().find(|r| r.population_hash != first.population_hash) {
        return Err(Error::Parity(format!(
            "population mismatch: {} vs {}",
            first.population_hash, r.population_hash
        )));
    }
    let mut by_method: BTreeMap<&'static str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_method.entry(r.method.name()).or_default().push(r);
    }
    let mut summaries = Vec::new();
    for group in by_method.values() {
        let norm: Vec<f64> = group.iter().map(|r| r.normalized_return).collect();
        let (m, s) = mean_std(&norm);
        let totals: Vec<f64> = group.iter().map(|r| r.samples.total() as f64).collect();
        let errs: Vec<f64> = group.iter().map(|r| r.samples.error_steps as f64).collect();
        summaries.push(MethodSummary {
            method: group[0].method,
            nu_input: group[0].nu_input,
            seeds: group.len(),
            normalized_mean: m,
            normalized_std: s,
            mean_total_steps: mean_std(&totals).0,
            mean_error_steps: mean_std(&errs).0,
        });
    }
    let mut improvements = Vec::new();
    for a in &summaries {
        for b in &summaries {
            if a.method != b.method {
                improvements.push(Improvement {
                    method: a.method,
                    over: b.method,
                    relative: relative_improvement(a.normalized_mean, b.normalized_mean),
                });
            }
        }
    }
    let mut ranked: Vec<&MethodSummary> = summaries.iter().collect();
    ranked.sort_by(|a, b| b.normalized_mean.total_cmp(&a.normalized_mean));
    let ranking = ranked.iter().map(|s| s.method).collect();
    let totals: Vec<u64> = reports.iter().map(|r| r.samples.total()).collect();
    let min_total = *totals.iter().min().unwrap_or(&0);
    let max_total = *totals.iter().max().unwrap_or(&0);
    let spread = if max_total == 0 { 0.0 } else { (max_total - min_total) as f64 / max_total as f64 };
    let error_steps_included = reports.iter().filter(|r| r.method == Method::Eap).all(|r| {
        r.samples.error_steps > 0
            && r.samples.total() == r.samples.pretrain_steps + r.samples.policy_steps + r.samples.error_steps
    });
    Ok(Comparison {
        population_hash: first.population_hash.clone(),
        summaries,
        improvements,
        ranking,
        audit: BudgetAudit {
            error_steps_included,
            min_total,
            max_total,
            spread,
            within_one_percent: spread <= 0.01,
        },
    })
}

impl Comparison {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn improvement(&self, method: Method, over: Method) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.method == method && i.over == over)
            .map(|i| i.relative)
    }
}
