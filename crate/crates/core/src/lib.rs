//! Error-aware policy learning for zero-shot transfer across dynamics
//! variations, with domain-randomization and universal-policy baselines.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to [`Real`] for applications.

pub mod ablation;
pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod errorfn;
pub mod eval;
pub mod experiment;
pub mod net;
pub mod persist;
pub mod plot;
pub mod ppo;
pub mod rng;
pub mod rollout;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the command-line front end.
pub type Real = f64;
pub type RealAgent = agent::Agent<Real>;
pub type RealTrainer = train::Trainer<Real>;
pub type RealEnv = env::EnvInstance<Real>;
pub type RealNet = net::FeedforwardNet<Real>;
pub type RealPolicy = net::GaussianPolicyHead<Real>;
pub type RealPredictor = errorfn::ErrorPredictor<Real>;
