//! Parameterized physics environments with an explicit observable /
//! unobservable parameter split.
//!
//! Every task keeps its physical parameters in one canonical order. The
//! observable vector `mu` and the unobservable vector `nu` are views over that
//! order selected by each parameter's [`ParamRole`], so re-tagging a parameter
//! never changes the physics, only what a policy is allowed to see.

mod cartpole;
mod hopper;
mod integrate;
mod pendulum;
mod population;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub use cartpole::{cartpole_descriptor, CartPoleParams};
pub use hopper::{hopper_descriptor, HopperParams};
pub use integrate::Integrator;
pub use pendulum::{pendulum_descriptor, PendulumParams};
pub use population::{sample_population, EnvPopulation, SplitTag, POPULATION_FORMAT_VERSION};

/// Closed real interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Observable,
    Unobservable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub role: ParamRole,
    pub unit: String,
    pub train_range: Interval,
    pub test_range: Interval,
}

impl ParamSpec {
    pub fn new(
        name: &str,
        role: ParamRole,
        unit: &str,
        train_range: Interval,
        test_range: Interval,
    ) -> Result<Self> {
        let spec = ParamSpec {
            name: name.to_string(),
            role,
            unit: unit.to_string(),
            train_range,
            test_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Test range built by pushing the upper end out by `fraction` of the train width.
    pub fn extended_upper(
        name: &str,
        role: ParamRole,
        unit: &str,
        train_range: Interval,
        fraction: f64,
    ) -> Result<Self> {
        let width = train_range.hi - train_range.lo;
        let test = Interval::new(train_range.lo, train_range.hi + fraction * width);
        Self::new(name, role, unit, train_range, test)
    }

    pub fn validate(&self) -> Result<()> {
        let (tr, te) = (self.train_range, self.test_range);
        if !(tr.lo.is_finite() && tr.hi.is_finite() && te.lo.is_finite() && te.hi.is_finite()) {
            return Err(Error::config(format!("{}: ranges must be finite", self.name)));
        }
        if tr.lo >= tr.hi {
            return Err(Error::config(format!(
                "{}: train range [{}, {}] is empty",
                self.name, tr.lo, tr.hi
            )));
        }
        if te.lo > te.hi {
            return Err(Error::config(format!(
                "{}: test range [{}, {}] is inverted",
                self.name, te.lo, te.hi
            )));
        }
        if te.lo >= tr.lo && te.hi <= tr.hi {
            return Err(Error::config(format!(
                "{}: test range [{}, {}] lies inside train range [{}, {}]",
                self.name, te.lo, te.hi, tr.lo, tr.hi
            )));
        }
        Ok(())
    }

    /// Union of train and test ranges: every value a population may hold.
    pub fn declared_range(&self) -> Interval {
        self.train_range.hull(&self.test_range)
    }

    pub fn outside_train(&self, x: f64) -> bool {
        !self.train_range.contains(x)
    }
}

/// Which declared range a parameter vector is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeCheck {
    Train,
    Test,
    Declared,
}

/// Observable (`mu`) and unobservable (`nu`) parameter values of one
/// environment, ordered as in the descriptor's role views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams<S> {
    pub mu: Vec<S>,
    pub nu: Vec<S>,
}

impl<S: Scalar> DynamicsParams<S> {
    pub fn cast<T: Scalar>(&self) -> DynamicsParams<T> {
        DynamicsParams {
            mu: self.mu.iter().map(|x| T::lit(x.as_f64())).collect(),
            nu: self.nu.iter().map(|x| T::lit(x.as_f64())).collect(),
        }
    }
}

/// Optional horizontal push: one per episode, random sign and magnitude, held
/// for `duration_steps` control steps starting at a uniformly drawn step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Newtons.
    pub magnitude: Interval,
    pub duration_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    CartPole,
    Pendulum,
    Hopper,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::CartPole => "cartpole",
            TaskKind::Pendulum => "pendulum",
            TaskKind::Hopper => "hopper",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cartpole" => Ok(TaskKind::CartPole),
            "pendulum" => Ok(TaskKind::Pendulum),
            "hopper" => Ok(TaskKind::Hopper),
            other => Err(Error::config(format!("unknown task `{other}`"))),
        }
    }

    pub fn descriptor(self) -> EnvDescriptor {
        match self {
            TaskKind::CartPole => cartpole_descriptor(),
            TaskKind::Pendulum => pendulum_descriptor(),
            TaskKind::Hopper => hopper_descriptor(),
        }
    }
}

/// Which parameter groups held-out environments push outside the train range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeldOutVary {
    #[default]
    Both,
    Mu,
    Nu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub name: String,
    pub kind: TaskKind,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Seconds per control step.
    pub dt: f64,
    pub substeps: usize,
    pub integrator: Integrator,
    pub max_steps: usize,
    /// Canonical order; roles select the `mu` / `nu` views.
    pub param_specs: Vec<ParamSpec>,
    /// Canonical-order values of the reference environment.
    pub reference_values: Vec<f64>,
    pub action_bounds: Vec<Interval>,
    pub perturbation: Option<PerturbationSpec>,
    pub heldout_vary: HeldOutVary,
}

impl EnvDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.max_steps == 0 {
            return Err(Error::config("state_dim, action_dim and max_steps must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.substeps == 0 {
            return Err(Error::config("dt must be positive and substeps at least 1"));
        }
        if self.action_bounds.len() != self.action_dim {
            return Err(Error::config("one action bound per action dimension"));
        }
        for b in &self.action_bounds {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
                return Err(Error::config("action bounds must be finite and non-empty"));
            }
        }
        for spec in &self.param_specs {
            spec.validate()?;
        }
        let mut names: Vec<&str> = self.param_specs.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.param_specs.len() {
            return Err(Error::config("parameter names must be unique"));
        }
        if self.reference_values.len() != self.param_specs.len() {
            return Err(Error::config("reference needs one value per parameter"));
        }
        for (spec, &v) in self.param_specs.iter().zip(&self.reference_values) {
            if !spec.train_range.contains(v) {
                return Err(Error::config(format!(
                    "reference {} = {v} outside train range [{}, {}]",
                    spec.name, spec.train_range.lo, spec.train_range.hi
                )));
            }
        }
        if let Some(p) = &self.perturbation {
            if !(p.magnitude.lo >= 0.0 && p.magnitude.lo <= p.magnitude.hi) || p.duration_steps == 0
            {
                return Err(Error::config("perturbation magnitude range or duration invalid"));
            }
        }
        Ok(())
    }

    fn role_indices(&self, role: ParamRole) -> Vec<usize> {
        self.param_specs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn observable_indices(&self) -> Vec<usize> {
        self.role_indices(ParamRole::Observable)
    }

    pub fn unobservable_indices(&self) -> Vec<usize> {
        self.role_indices(ParamRole::Unobservable)
    }

    pub fn mu_dim(&self) -> usize {
        self.observable_indices().len()
    }

    pub fn nu_dim(&self) -> usize {
        self.unobservable_indices().len()
    }

    pub fn mu_names(&self) -> Vec<String> {
        self.observable_indices()
            .into_iter()
            .map(|i| self.param_specs[i].name.clone())
            .collect()
    }

    pub fn nu_names(&self) -> Vec<String> {
        self.unobservable_indices()
            .into_iter()
            .map(|i| self.param_specs[i].name.clone())
            .collect()
    }

    pub fn mu_specs(&self) -> Vec<&ParamSpec> {
        self.observable_indices().into_iter().map(|i| &self.param_specs[i]).collect()
    }

    pub fn nu_specs(&self) -> Vec<&ParamSpec> {
        self.unobservable_indices().into_iter().map(|i| &self.param_specs[i]).collect()
    }

    /// Splits canonical-order values into the `(mu, nu)` views.
    pub fn split<S: Scalar>(&self, canonical: &[S]) -> DynamicsParams<S> {
        DynamicsParams {
            mu: self.observable_indices().into_iter().map(|i| canonical[i]).collect(),
            nu: self.unobservable_indices().into_iter().map(|i| canonical[i]).collect(),
        }
    }

    /// Inverse of [`split`](Self::split).
    pub fn canonical<S: Scalar>(&self, params: &DynamicsParams<S>) -> Result<Vec<S>> {
        let obs = self.observable_indices();
        let unobs = self.unobservable_indices();
        if params.mu.len() != obs.len() || params.nu.len() != unobs.len() {
            return Err(Error::contract(format!(
                "{}: expected |mu|={} |nu|={}, got {} and {}",
                self.name,
                obs.len(),
                unobs.len(),
                params.mu.len(),
                params.nu.len()
            )));
        }
        let mut out = vec![S::zero(); self.param_specs.len()];
        for (&i, &v) in obs.iter().zip(&params.mu) {
            out[i] = v;
        }
        for (&i, &v) in unobs.iter().zip(&params.nu) {
            out[i] = v;
        }
        Ok(out)
    }

    pub fn reference_params<S: Scalar>(&self) -> DynamicsParams<S> {
        let values: Vec<S> = self.reference_values.iter().map(|&v| S::lit(v)).collect();
        self.split(&values)
    }

    /// Builds parameters after checking dimensions and ranges.
    pub fn params<S: Scalar>(
        &self,
        mu: Vec<S>,
        nu: Vec<S>,
        check: RangeCheck,
    ) -> Result<DynamicsParams<S>> {
        let params = DynamicsParams { mu, nu };
        let canonical = self.canonical(&params)?;
        for (spec, v) in self.param_specs.iter().zip(&canonical) {
            let range = match check {
                RangeCheck::Train => spec.train_range,
                RangeCheck::Test => spec.test_range,
                RangeCheck::Declared => spec.declared_range(),
            };
            let x = v.as_f64();
            if !range.contains(x) {
                return Err(Error::contract(format!(
                    "{} = {x} outside [{}, {}]",
                    spec.name, range.lo, range.hi
                )));
            }
        }
        Ok(params)
    }

    /// Re-tags parameters so exactly `observable` are in `mu`.
    pub fn remap_split(&self, observable: &[&str]) -> Result<EnvDescriptor> {
        for name in observable {
            if !self.param_specs.iter().any(|p| p.name == *name) {
                return Err(Error::config(format!(
                    "{}: unknown parameter `{name}` (known: {})",
                    self.name,
                    self.param_specs
                        .iter()
                        .map(|p| p.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
        }
        let mut out = self.clone();
        for spec in &mut out.param_specs {
            spec.role = if observable.contains(&spec.name.as_str()) {
                ParamRole::Observable
            } else {
                ParamRole::Unobservable
            };
        }
        Ok(out)
    }

    /// Maps policy actions in `[-1, 1]` onto the physical action bounds.
    pub fn scale_action<S: Scalar>(&self, unit: &[S]) -> Vec<S> {
        unit.iter()
            .zip(&self.action_bounds)
            .map(|(&u, b)| S::lit(b.midpoint()) + S::lit(b.half_width()) * u)
            .collect()
    }

    /// Largest return an episode can collect, when the task has one.
    pub fn max_return(&self) -> Option<f64> {
        match self.kind {
            TaskKind::CartPole => Some(self.max_steps as f64),
            _ => None,
        }
    }
}

/// Rescales parameter vectors to `[-1, 1]` over each train range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamScaler {
    mu_mid: Vec<f64>,
    mu_half: Vec<f64>,
    nu_mid: Vec<f64>,
    nu_half: Vec<f64>,
}

impl ParamScaler {
    pub fn new(descriptor: &EnvDescriptor) -> Self {
        let mu = descriptor.mu_specs();
        let nu = descriptor.nu_specs();
        ParamScaler {
            mu_mid: mu.iter().map(|p| p.train_range.midpoint()).collect(),
            mu_half: mu.iter().map(|p| p.train_range.half_width()).collect(),
            nu_mid: nu.iter().map(|p| p.train_range.midpoint()).collect(),
            nu_half: nu.iter().map(|p| p.train_range.half_width()).collect(),
        }
    }

    pub fn mu<S: Scalar>(&self, mu: &[S]) -> Vec<S> {
        scale(mu, &self.mu_mid, &self.mu_half)
    }

    pub fn nu<S: Scalar>(&self, nu: &[S]) -> Vec<S> {
        scale(nu, &self.nu_mid, &self.nu_half)
    }

    /// Train-range midpoints of the unobservable parameters.
    pub fn nu_midpoint<S: Scalar>(&self) -> Vec<S> {
        self.nu_mid.iter().map(|&v| S::lit(v)).collect()
    }
}

fn scale<S: Scalar>(x: &[S], mid: &[f64], half: &[f64]) -> Vec<S> {
    x.iter()
        .zip(mid.iter().zip(half))
        .map(|(&v, (&m, &h))| (v - S::lit(m)) / S::lit(h))
        .collect()
}

/// Physical parameters of one task, decoded from canonical order.
#[derive(Debug, Clone, PartialEq)]
pub enum Physics<S> {
    CartPole(CartPoleParams<S>),
    Pendulum(PendulumParams<S>),
    Hopper(HopperParams<S>),
}

impl<S: Scalar> Physics<S> {
    fn new(kind: TaskKind, canonical: &[S]) -> Self {
        match kind {
            TaskKind::CartPole => Physics::CartPole(CartPoleParams::from_canonical(canonical)),
            TaskKind::Pendulum => Physics::Pendulum(PendulumParams::from_canonical(canonical)),
            TaskKind::Hopper => Physics::Hopper(HopperParams::from_canonical(canonical)),
        }
    }

    /// Time derivative of the internal state under actuation `u` and external force `push`.
    fn derivative(&self, q: &[S], u: S, push: S, out: &mut [S]) {
        match self {
            Physics::CartPole(p) => p.derivative(q, u, push, out),
            Physics::Pendulum(p) => p.derivative(q, u, push, out),
            Physics::Hopper(p) => p.derivative(q, u, push, out),
        }
    }

    fn dof_pairs(&self) -> &'static [(usize, usize)] {
        match self {
            Physics::CartPole(_) => cartpole::DOF_PAIRS,
            Physics::Pendulum(_) => pendulum::DOF_PAIRS,
            Physics::Hopper(_) => hopper::DOF_PAIRS,
        }
    }

    fn internal_dim(&self) -> usize {
        match self {
            Physics::CartPole(_) => 4,
            Physics::Pendulum(_) => 2,
            Physics::Hopper(_) => 2,
        }
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub next_state: Vec<S>,
    pub reward: S,
    /// Terminal: the task failed or finished.
    pub done: bool,
    /// The step limit was reached without a terminal state.
    pub truncated: bool,
    /// The requested action lay outside the bounds and was clipped.
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Push {
    start: usize,
    duration: usize,
    force: f64,
}

/// A stateful simulator bound to one parameter vector.
#[derive(Debug, Clone)]
pub struct EnvInstance<S: Scalar> {
    descriptor: Arc<EnvDescriptor>,
    params: DynamicsParams<S>,
    physics: Physics<S>,
    /// Internal physical state (may differ from the observation encoding).
    q: Vec<S>,
    step_count: usize,
    finished: bool,
    rng: RngStream,
    push: Option<Push>,
}

impl<S: Scalar> EnvInstance<S> {
    pub fn new(
        descriptor: Arc<EnvDescriptor>,
        params: DynamicsParams<S>,
        rng: RngStream,
    ) -> Result<Self> {
        let canonical = descriptor.canonical(&params)?;
        if !canonical.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("non-finite dynamics parameter"));
        }
        let physics = Physics::new(descriptor.kind, &canonical);
        let q = vec![S::zero(); physics.internal_dim()];
        Ok(EnvInstance {
            descriptor,
            params,
            physics,
            q,
            step_count: 0,
            finished: false,
            rng,
            push: None,
        })
    }

    pub fn descriptor(&self) -> &Arc<EnvDescriptor> {
        &self.descriptor
    }

    pub fn params(&self) -> &DynamicsParams<S> {
        &self.params
    }

    pub fn physics(&self) -> &Physics<S> {
        &self.physics
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Current observation.
    pub fn state(&self) -> Vec<S> {
        self.observe(&self.q)
    }

    fn observe(&self, q: &[S]) -> Vec<S> {
        match self.descriptor.kind {
            TaskKind::Pendulum => pendulum::observe(q),
            _ => q.to_vec(),
        }
    }

    /// Draws an initial state from the task's start distribution and re-draws
    /// the perturbation schedule.
    pub fn reset(&mut self) -> Vec<S> {
        self.q = match self.descriptor.kind {
            TaskKind::CartPole => cartpole::initial_state(&mut self.rng),
            TaskKind::Pendulum => pendulum::initial_state(&mut self.rng),
            TaskKind::Hopper => hopper::initial_state(&mut self.rng, &self.physics),
        };
        self.step_count = 0;
        self.finished = false;
        self.push = self.descriptor.perturbation.as_ref().map(|p| {
            let start = self.rng.index(self.descriptor.max_steps);
            let magnitude = self.rng.uniform(p.magnitude.lo, p.magnitude.hi);
            let sign = if self.rng.coin() { 1.0 } else { -1.0 };
            Push {
                start,
                duration: p.duration_steps,
                force: sign * magnitude,
            }
        });
        self.state()
    }

    /// Places the simulator at an observed state (a fresh episode with no push).
    pub fn set_state(&mut self, state: &[S]) -> Result<()> {
        if state.len() != self.descriptor.state_dim {
            return Err(Error::contract(format!(
                "state has {} components, expected {}",
                state.len(),
                self.descriptor.state_dim
            )));
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("non-finite state"));
        }
        self.q = match self.descriptor.kind {
            TaskKind::Pendulum => pendulum::unobserve(state)?,
            _ => state.to_vec(),
        };
        self.step_count = 0;
        self.finished = false;
        self.push = None;
        Ok(())
    }

    fn push_force(&self) -> S {
        match self.push {
            Some(p) if self.step_count >= p.start && self.step_count < p.start + p.duration => {
                S::lit(p.force)
            }
            _ => S::zero(),
        }
    }

    /// Advances the internal state one control step without bookkeeping.
    fn integrate(&mut self, u: S, push: S) {
        let d = &self.descriptor;
        let physics = &self.physics;
        let h = S::lit(d.dt / d.substeps as f64);
        for _ in 0..d.substeps {
            d.integrator.advance(
                &mut self.q,
                h,
                |q, out| physics.derivative(q, u, push, out),
                physics.dof_pairs(),
            );
        }
        if let Physics::Hopper(p) = physics {
            p.enforce_ground(&mut self.q);
        }
    }

    /// One control step.
    pub fn step(&mut self, action: &[S]) -> Result<StepOutcome<S>> {
        if self.finished {
            return Err(Error::contract("step called on a finished episode"));
        }
        if action.len() != self.descriptor.action_dim {
            return Err(Error::contract(format!(
                "action has {} components, expected {}",
                action.len(),
                self.descriptor.action_dim
            )));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(Error::contract("non-finite action"));
        }
        let bound = self.descriptor.action_bounds[0];
        let raw = action[0].as_f64();
        let clipped = !bound.contains(raw);
        let u = if clipped { S::lit(bound.clamp(raw)) } else { action[0] };

        let push = self.push_force();
        let q_prev = self.q.clone();
        self.integrate(u, push);
        self.step_count += 1;

        let (reward, done) = match &self.physics {
            Physics::CartPole(_) => cartpole::reward_done(&self.q),
            Physics::Pendulum(_) => pendulum::reward_done(&q_prev, u),
            Physics::Hopper(p) => p.reward_done(&self.q, u),
        };
        let truncated = !done && self.step_count >= self.descriptor.max_steps;
        self.finished = done || truncated;
        Ok(StepOutcome {
            next_state: self.state(),
            reward,
            done,
            truncated,
            clipped,
        })
    }

    /// One control step of the raw dynamics from `state`, ignoring termination
    /// and the step limit. Used for paired-rollout error targets and oracles.
    pub fn simulate_from(&mut self, state: &[S], action: &[S]) -> Result<Vec<S>> {
        self.set_state(state)?;
        self.advance_raw(action)
    }

    /// Continues the raw dynamics from the current state.
    pub fn advance_raw(&mut self, action: &[S]) -> Result<Vec<S>> {
        if action.len() != self.descriptor.action_dim {
            return Err(Error::contract("action dimension mismatch"));
        }
        let bound = self.descriptor.action_bounds[0];
        let u = S::lit(bound.clamp(action[0].as_f64()));
        self.integrate(u, S::zero());
        Ok(self.state())
    }

    /// Total mechanical energy, where the task defines one.
    pub fn energy(&self) -> Option<S> {
        match &self.physics {
            Physics::Pendulum(p) => Some(p.energy(&self.q)),
            Physics::Hopper(p) => Some(p.energy(&self.q)),
            Physics::CartPole(_) => None,
        }
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamName;

    fn cartpole_env(params: DynamicsParams<f64>) -> EnvInstance<f64> {
        EnvInstance::new(
            Arc::new(cartpole_descriptor()),
            params,
            RngStream::child(1, StreamName::EnvDynamics),
        )
        .unwrap()
    }

    #[test]
    fn param_spec_rejects_empty_and_contained_ranges() {
        let role = ParamRole::Observable;
        assert!(ParamSpec::new("a", role, "m", Interval::new(1.0, 1.0), Interval::new(0.0, 2.0)).is_err());
        assert!(ParamSpec::new("a", role, "m", Interval::new(0.0, 1.0), Interval::new(0.2, 0.8)).is_err());
        assert!(ParamSpec::new("a", role, "m", Interval::new(0.0, 1.0), Interval::new(0.0, 1.2)).is_ok());
    }

    #[test]
    fn stepping_a_finished_episode_is_a_contract_violation() {
        let d = cartpole_descriptor();
        let mut env = cartpole_env(d.reference_params());
        env.set_state(&[0.0, 0.0, 0.3, 0.0]).unwrap();
        let out = env.step(&[0.0]).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 0.0);
        assert!(matches!(env.step(&[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn out_of_bounds_action_is_clipped_and_flagged() {
        let d = cartpole_descriptor();
        let mut a = cartpole_env(d.reference_params());
        let mut b = cartpole_env(d.reference_params());
        a.set_state(&[0.0, 0.0, 0.01, 0.0]).unwrap();
        b.set_state(&[0.0, 0.0, 0.01, 0.0]).unwrap();
        let big = a.step(&[50.0]).unwrap();
        let max = b.step(&[10.0]).unwrap();
        assert!(big.clipped);
        assert!(!max.clipped);
        assert_eq!(big.next_state, max.next_state);
    }

    #[test]
    fn episode_length_never_exceeds_max_steps() {
        let d = pendulum_descriptor();
        let mut env = EnvInstance::new(
            Arc::new(d.clone()),
            d.reference_params::<f64>(),
            RngStream::child(2, StreamName::EnvDynamics),
        )
        .unwrap();
        env.reset();
        let mut steps = 0;
        loop {
            let out = env.step(&[0.5]).unwrap();
            steps += 1;
            if out.done || out.truncated {
                assert!(out.truncated);
                break;
            }
        }
        assert_eq!(steps, d.max_steps);
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn remap_split_moves_membership() {
        let d = cartpole_descriptor();
        let r = d
            .remap_split(&["pole_length", "pole_mass", "rot_damping"])
            .unwrap();
        assert_eq!(r.mu_names(), vec!["pole_length", "pole_mass", "rot_damping"]);
        assert_eq!(r.nu_names(), vec!["cart_mass", "rot_friction", "trans_friction"]);

        let all: Vec<&str> = d.param_specs.iter().map(|p| p.name.as_str()).collect();
        let full = d.remap_split(&all).unwrap();
        assert_eq!(full.mu_dim(), 6);
        assert_eq!(full.nu_dim(), 0);

        assert!(matches!(d.remap_split(&["pole_lenght"]), Err(Error::Config(_))));
    }

    #[test]
    fn split_and_canonical_are_inverse() {
        let d = cartpole_descriptor()
            .remap_split(&["rot_damping", "cart_mass"])
            .unwrap();
        let values = vec![0.5, 0.1, 1.0, 0.01, 0.02, 0.03];
        let p = d.split(&values);
        assert_eq!(p.mu, vec![1.0, 0.01]);
        assert_eq!(d.canonical(&p).unwrap(), values);
    }

    #[test]
    fn perturbation_changes_trajectory_only_inside_its_window() {
        let mut d = cartpole_descriptor();
        d.perturbation = Some(PerturbationSpec {
            magnitude: Interval::new(5.0, 5.0),
            duration_steps: 3,
        });
        let d = Arc::new(d);
        let mut pushed = EnvInstance::<f64>::new(
            d.clone(),
            d.reference_params(),
            RngStream::child(9, StreamName::EnvDynamics),
        )
        .unwrap();
        pushed.reset();
        let push = pushed.push.unwrap();
        assert_eq!(push.force.abs(), 5.0);
        assert_eq!(push.duration, 3);
        assert!(push.start < d.max_steps);
    }

    #[test]
    fn scaler_maps_train_range_to_unit_interval() {
        let d = cartpole_descriptor();
        let s = ParamScaler::new(&d);
        let lo: Vec<f64> = d.mu_specs().iter().map(|p| p.train_range.lo).collect();
        let hi: Vec<f64> = d.mu_specs().iter().map(|p| p.train_range.hi).collect();
        for v in s.mu(&lo) {
            assert!((v + 1.0).abs() < 1e-12);
        }
        for v in s.mu(&hi) {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.nu(&s.nu_midpoint::<f64>()), vec![0.0; 3]);
    }
}
