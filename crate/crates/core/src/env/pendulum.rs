//! Torque-limited pendulum swing-up. Internal state `(theta, theta_dot)` with
//! `theta = 0` upright; observed as `(cos theta, sin theta, theta_dot)`.

use super::{EnvDescriptor, Integrator, Interval, ParamRole, ParamSpec, TaskKind};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub(super) const DOF_PAIRS: &[(usize, usize)] = &[(0, 1)];

const GRAVITY: f64 = 10.0;
const COULOMB_SMOOTHING: f64 = 0.01;
const TEST_EXTENSION: f64 = 0.25;

pub fn pendulum_descriptor() -> EnvDescriptor {
    use ParamRole::{Observable, Unobservable};
    let ext = |name, role, unit, lo, hi| {
        ParamSpec::extended_upper(name, role, unit, Interval::new(lo, hi), TEST_EXTENSION)
            .expect("static pendulum ranges")
    };
    EnvDescriptor {
        name: "pendulum".into(),
        kind: TaskKind::Pendulum,
        state_dim: 3,
        action_dim: 1,
        dt: 0.05,
        substeps: 4,
        integrator: Integrator::Dopri45,
        max_steps: 200,
        param_specs: vec![
            ext("pole_length", Observable, "m", 0.8, 1.2),
            ext("pole_mass", Observable, "kg", 0.8, 1.2),
            ext("joint_damping", Unobservable, "N*m*s/rad", 0.0, 0.1),
            ext("dry_friction", Unobservable, "N*m", 0.0, 0.1),
            ext("gravity_scale", Unobservable, "1", 0.9, 1.1),
        ],
        reference_values: vec![1.0, 1.0, 0.0, 0.0, 1.0],
        action_bounds: vec![Interval::new(-2.0, 2.0)],
        perturbation: None,
        heldout_vary: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams<S> {
    pub pole_length: S,
    pub pole_mass: S,
    pub joint_damping: S,
    pub dry_friction: S,
    pub gravity_scale: S,
}

impl<S: Scalar> PendulumParams<S> {
    pub fn from_canonical(v: &[S]) -> Self {
        PendulumParams {
            pole_length: v[0],
            pole_mass: v[1],
            joint_damping: v[2],
            dry_friction: v[3],
            gravity_scale: v[4],
        }
    }

    fn gravity(&self) -> S {
        S::lit(GRAVITY) * self.gravity_scale
    }

    fn inertia(&self) -> S {
        self.pole_mass * self.pole_length * self.pole_length / S::lit(3.0)
    }

    /// `push` is a horizontal force at the tip.
    pub(super) fn derivative(&self, q: &[S], torque: S, push: S, out: &mut [S]) {
        let (theta, omega) = (q[0], q[1]);
        let (sin, cos) = theta.sin_cos();
        let half = self.pole_length * S::lit(0.5);
        let net = self.pole_mass * self.gravity() * half * sin + torque
            + push * self.pole_length * cos
            - self.joint_damping * omega
            - self.dry_friction * (omega / S::lit(COULOMB_SMOOTHING)).tanh();
        out[0] = omega;
        out[1] = net / self.inertia();
    }

    /// Kinetic plus potential energy, zero potential at the pivot height.
    pub fn energy(&self, q: &[S]) -> S {
        let half = self.pole_length * S::lit(0.5);
        S::lit(0.5) * self.inertia() * q[1] * q[1]
            + self.pole_mass * self.gravity() * half * q[0].cos()
    }
}

pub(super) fn observe<S: Scalar>(q: &[S]) -> Vec<S> {
    let (sin, cos) = q[0].sin_cos();
    vec![cos, sin, q[1]]
}

pub(super) fn unobserve<S: Scalar>(obs: &[S]) -> Result<Vec<S>> {
    let norm = (obs[0] * obs[0] + obs[1] * obs[1]).sqrt();
    if (norm - S::one()).abs() > S::lit(1e-6) {
        return Err(Error::contract(format!(
            "pendulum observation is not on the unit circle (|(cos, sin)| = {norm})"
        )));
    }
    Ok(vec![obs[1].atan2(obs[0]), obs[2]])
}

pub(super) fn initial_state<S: Scalar>(rng: &mut RngStream) -> Vec<S> {
    let pi = std::f64::consts::PI;
    vec![S::lit(rng.uniform(pi - 0.1, pi + 0.1)), S::zero()]
}

pub(super) fn wrap_angle<S: Scalar>(theta: S) -> S {
    let pi = S::lit(std::f64::consts::PI);
    let two_pi = pi + pi;
    let mut t = (theta + pi) % two_pi;
    if t < S::zero() {
        t += two_pi;
    }
    t - pi
}

/// Reward is charged on the state before the step, as in the benchmark task.
pub(super) fn reward_done<S: Scalar>(q_prev: &[S], torque: S) -> (S, bool) {
    let th = wrap_angle(q_prev[0]);
    let cost = th * th + S::lit(0.1) * q_prev[1] * q_prev[1] + S::lit(0.001) * torque * torque;
    (-cost, false)
}
