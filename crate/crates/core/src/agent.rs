//! Policy input layouts per method and the action query chain.

use serde::{Deserialize, Serialize};

use crate::env::{EnvDescriptor, ParamScaler};
use crate::error::{Error, Result};
use crate::errorfn::{ErrorFnConfig, ErrorPredictor};
use crate::ppo::{ActorCritic, PpoConfig};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Error-aware policy, input `(s, mu, e)`.
    Eap,
    /// Domain randomization, input `s`.
    Dr,
    /// Universal policy, input `(s, mu, nu)`.
    Up,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eap => "eap",
            Method::Dr => "dr",
            Method::Up => "up",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "eap" => Ok(Method::Eap),
            "dr" => Ok(Method::Dr),
            "up" => Ok(Method::Up),
            other => Err(Error::config(format!("unknown method `{other}` (expected eap, dr or up)"))),
        }
    }
}

/// Whether the error input comes from the predictor or is pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    Predicted,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    #[default]
    Mean,
    Sample,
}

/// What a universal policy is told about `nu` at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuInput {
    /// Train-range midpoint per component.
    #[default]
    Midpoint,
    /// The true value; a diagnostic upper bound, not a zero-shot setting.
    Oracle,
}

/// One answered action query.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision<S> {
    /// Full policy input used for the executed action.
    pub obs: Vec<S>,
    /// Executed action in policy units (scale with the descriptor before stepping).
    pub action: Vec<S>,
    pub log_prob: S,
    /// The error input was non-finite and replaced by zeros.
    pub fault: bool,
}

/// A policy, its critic and, for the error-aware method, the error predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent<S> {
    pub method: Method,
    pub scaler: ParamScaler,
    pub ac: ActorCritic<S>,
    pub predictor: Option<ErrorPredictor<S>>,
    pub state_dim: usize,
    pub mu_dim: usize,
    pub nu_dim: usize,
    pub e_dim: usize,
}

impl<S: Scalar> Agent<S> {
    pub fn new(
        method: Method,
        descriptor: &EnvDescriptor,
        hidden: &[usize],
        ppo: &PpoConfig,
        error_fn: &ErrorFnConfig,
        init_rng: &mut RngStream,
    ) -> Result<Self> {
        let state_dim = descriptor.state_dim;
        let (mu_dim, nu_dim) = (descriptor.mu_dim(), descriptor.nu_dim());
        let e_dim = if method == Method::Eap { error_fn.feature_dim(state_dim) } else { 0 };
        let obs_dim = match method {
            Method::Eap => state_dim + mu_dim + e_dim,
            Method::Dr => state_dim,
            Method::Up => state_dim + mu_dim + nu_dim,
        };
        let ac = ActorCritic::new(obs_dim, hidden, descriptor.action_dim, ppo, init_rng)?;
        let predictor = if method == Method::Eap {
            Some(ErrorPredictor::new(error_fn, state_dim, descriptor.action_dim, mu_dim, init_rng)?)
        } else {
            None
        };
        Ok(Agent {
            method,
            scaler: ParamScaler::new(descriptor),
            ac,
            predictor,
            state_dim,
            mu_dim,
            nu_dim,
            e_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.ac.obs_dim()
    }

    /// Policy input for the given parts. `e` is ignored except for the
    /// error-aware method and `nu` except for the universal policy.
    pub fn observation(&self, s: &[S], mu: &[S], nu: &[S], e: &[S]) -> Vec<S> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(s);
        match self.method {
            Method::Dr => {}
            Method::Eap => {
                obs.extend(self.scaler.mu(mu));
                obs.extend_from_slice(e);
            }
            Method::Up => {
                obs.extend(self.scaler.mu(mu));
                obs.extend(self.scaler.nu(nu));
            }
        }
        obs
    }

    fn zero_error(&self) -> Vec<S> {
        vec![S::zero(); self.e_dim]
    }

    fn draw(&self, obs: &[S], mode: ActionMode, rng: &mut RngStream) -> Result<(Vec<S>, S)> {
        let mean = self.ac.policy.mean(obs)?;
        Ok(match mode {
            ActionMode::Sample => self.ac.policy.sample_around(&mean, rng),
            ActionMode::Mean => {
                let lp = self.ac.policy.log_density(&mean, &mean);
                (mean, lp)
            }
        })
    }

    /// Error input for state `s` given the uncorrected action `a`.
    fn error_input(&self, s: &[S], a: &[S], mu: &[S], errors: ErrorMode) -> Result<(Vec<S>, bool)> {
        match (errors, &self.predictor) {
            (ErrorMode::Predicted, Some(p)) => {
                let e = p.policy_features(s, a, mu)?;
                if e.iter().all(|v| v.is_finite()) {
                    Ok((e, false))
                } else {
                    Ok((self.zero_error(), true))
                }
            }
            _ => Ok((self.zero_error(), false)),
        }
    }

    /// The full query chain. For the error-aware method: an uncorrected action
    /// from `pi(s, mu, 0)` drawn on `uncorrected_rng`, the predicted error for
    /// it, then the executed action from `pi(s, mu, e)` drawn on `policy_rng`.
    /// Other methods draw once from their own input.
    pub fn decide(
        &self,
        s: &[S],
        mu: &[S],
        nu: &[S],
        errors: ErrorMode,
        mode: ActionMode,
        policy_rng: &mut RngStream,
        uncorrected_rng: &mut RngStream,
    ) -> Result<Decision<S>> {
        let (e, fault) = if self.method == Method::Eap && errors == ErrorMode::Predicted {
            let zero_obs = self.observation(s, mu, nu, &self.zero_error());
            let (a, _) = self.draw(&zero_obs, mode, uncorrected_rng)?;
            self.error_input(s, &a, mu, errors)?
        } else {
            (self.zero_error(), false)
        };
        let obs = self.observation(s, mu, nu, &e);
        let (action, log_prob) = self.draw(&obs, mode, policy_rng)?;
        Ok(Decision { obs, action, log_prob, fault })
    }

    /// Policy input at `s` with the uncorrected action taken at the mean; used
    /// to bootstrap values without consuming random draws.
    pub fn observation_at(&self, s: &[S], mu: &[S], nu: &[S], errors: ErrorMode) -> Result<Vec<S>> {
        let zero = self.zero_error();
        if self.method != Method::Eap || errors == ErrorMode::Zero {
            return Ok(self.observation(s, mu, nu, &zero));
        }
        let a = self.ac.policy.mean(&self.observation(s, mu, nu, &zero))?;
        let (e, _) = self.error_input(s, &a, mu, errors)?;
        Ok(self.observation(s, mu, nu, &e))
    }

    pub fn all_finite(&self) -> bool {
        self.ac.policy.all_finite()
            && self.ac.value.all_finite()
            && self.predictor.as_ref().is_none_or(|p| p.all_finite())
    }
}
