//! Pole on a cart with viscous and Coulomb joint losses.
//!
//! State `(x, x_dot, theta, theta_dot)`; `theta = 0` is upright. The action is
//! a horizontal force on the cart.

use super::{EnvDescriptor, Integrator, Interval, ParamRole, ParamSpec, TaskKind};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub(super) const DOF_PAIRS: &[(usize, usize)] = &[(0, 1), (2, 3)];

const GRAVITY: f64 = 9.8;
/// Velocity scale of the tanh smoothing applied to Coulomb friction.
const COULOMB_SMOOTHING: f64 = 0.01;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const X_LIMIT: f64 = 2.4;
const TEST_EXTENSION: f64 = 0.25;

pub fn cartpole_descriptor() -> EnvDescriptor {
    use ParamRole::{Observable, Unobservable};
    let ext = |name, role, unit, lo, hi| {
        ParamSpec::extended_upper(name, role, unit, Interval::new(lo, hi), TEST_EXTENSION)
            .expect("static cartpole ranges")
    };
    let param_specs = vec![
        ParamSpec::new(
            "pole_length",
            Observable,
            "m",
            Interval::new(0.4, 0.7),
            Interval::new(0.3, 0.8),
        )
        .expect("static cartpole ranges"),
        ext("pole_mass", Observable, "kg", 0.08, 0.15),
        ext("cart_mass", Observable, "kg", 0.8, 1.3),
        ext("rot_damping", Unobservable, "N*m*s/rad", 0.0, 0.02),
        ext("rot_friction", Unobservable, "1", 0.0, 0.05),
        ext("trans_friction", Unobservable, "N*s/m", 0.0, 0.05),
    ];
    EnvDescriptor {
        name: "cartpole".into(),
        kind: TaskKind::CartPole,
        state_dim: 4,
        action_dim: 1,
        dt: 0.02,
        substeps: 4,
        integrator: Integrator::Dopri45,
        max_steps: 500,
        param_specs,
        reference_values: vec![0.5, 0.1, 1.0, 0.0, 0.0, 0.0],
        action_bounds: vec![Interval::new(-10.0, 10.0)],
        perturbation: None,
        heldout_vary: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleParams<S> {
    /// Full pole length (m).
    pub pole_length: S,
    pub pole_mass: S,
    pub cart_mass: S,
    /// Viscous joint damping: torque `-b * theta_dot`.
    pub rot_damping: S,
    /// Coulomb joint friction coefficient.
    pub rot_friction: S,
    /// Viscous cart friction: force `-c * x_dot`.
    pub trans_friction: S,
}

impl<S: Scalar> CartPoleParams<S> {
    pub fn from_canonical(v: &[S]) -> Self {
        CartPoleParams {
            pole_length: v[0],
            pole_mass: v[1],
            cart_mass: v[2],
            rot_damping: v[3],
            rot_friction: v[4],
            trans_friction: v[5],
        }
    }

    pub(super) fn derivative(&self, q: &[S], force: S, push: S, out: &mut [S]) {
        let g = S::lit(GRAVITY);
        let half = self.pole_length * S::lit(0.5);
        let mp = self.pole_mass;
        let total = mp + self.cart_mass;
        let (x_dot, theta, theta_dot) = (q[1], q[2], q[3]);
        let (sin, cos) = theta.sin_cos();

        let joint_torque = -self.rot_damping * theta_dot
            - self.rot_friction * mp * g * half * (theta_dot / S::lit(COULOMB_SMOOTHING)).tanh();
        let f = force + push - self.trans_friction * x_dot;
        let temp = (f + mp * half * theta_dot * theta_dot * sin) / total;
        let theta_acc = (g * sin - cos * temp + joint_torque / (mp * half))
            / (half * (S::lit(4.0 / 3.0) - mp * cos * cos / total));
        let x_acc = temp - mp * half * theta_acc * cos / total;

        out[0] = x_dot;
        out[1] = x_acc;
        out[2] = theta_dot;
        out[3] = theta_acc;
    }
}

pub(super) fn initial_state<S: Scalar>(rng: &mut RngStream) -> Vec<S> {
    (0..4).map(|_| S::lit(rng.uniform(-0.05, 0.05))).collect()
}

pub(super) fn within_limits<S: Scalar>(q: &[S]) -> bool {
    q[0].abs().as_f64() <= X_LIMIT && q[2].abs().as_f64() <= THETA_LIMIT
}

pub(super) fn reward_done<S: Scalar>(q: &[S]) -> (S, bool) {
    if within_limits(q) {
        (S::one(), false)
    } else {
        (S::zero(), true)
    }
}
