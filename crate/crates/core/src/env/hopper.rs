//! Vertical spring-leg hopper: ballistic flight, spring-damper stance while
//! the body is lower than the leg's rest length. State `(height, velocity)`.
//! The action is a leg thrust that only acts during stance.

use super::{EnvDescriptor, Integrator, Interval, ParamRole, ParamSpec, Physics, TaskKind};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub(super) const DOF_PAIRS: &[(usize, usize)] = &[(0, 1)];

const GRAVITY: f64 = 9.81;
const TARGET_HEIGHT: f64 = 1.3;
const TEST_EXTENSION: f64 = 0.25;

pub fn hopper_descriptor() -> EnvDescriptor {
    use ParamRole::{Observable, Unobservable};
    let ext = |name, role, unit, lo, hi| {
        ParamSpec::extended_upper(name, role, unit, Interval::new(lo, hi), TEST_EXTENSION)
            .expect("static hopper ranges")
    };
    EnvDescriptor {
        name: "hopper".into(),
        kind: TaskKind::Hopper,
        state_dim: 2,
        action_dim: 1,
        dt: 0.02,
        substeps: 4,
        // hybrid contact switching: keep the low-order scheme
        integrator: Integrator::SemiImplicitEuler,
        max_steps: 300,
        param_specs: vec![
            ext("body_mass", Observable, "kg", 0.8, 1.2),
            ext("leg_length", Observable, "m", 0.9, 1.1),
            ext("leg_stiffness", Unobservable, "N/m", 800.0, 1200.0),
            ext("leg_damping", Unobservable, "N*s/m", 0.0, 10.0),
        ],
        reference_values: vec![1.0, 1.0, 1000.0, 0.0],
        action_bounds: vec![Interval::new(-20.0, 20.0)],
        perturbation: None,
        heldout_vary: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopperParams<S> {
    pub body_mass: S,
    pub leg_length: S,
    pub leg_stiffness: S,
    pub leg_damping: S,
}

impl<S: Scalar> HopperParams<S> {
    pub fn from_canonical(v: &[S]) -> Self {
        HopperParams {
            body_mass: v[0],
            leg_length: v[1],
            leg_stiffness: v[2],
            leg_damping: v[3],
        }
    }

    pub fn in_stance(&self, q: &[S]) -> bool {
        q[0] < self.leg_length
    }

    pub(super) fn derivative(&self, q: &[S], thrust: S, push: S, out: &mut [S]) {
        let (y, v) = (q[0], q[1]);
        let mut force = push;
        if self.in_stance(q) {
            let compression = self.leg_length - y;
            let leg = self.leg_stiffness * compression - self.leg_damping * v + thrust;
            // the foot cannot pull on the ground
            force += leg.max(S::zero());
        }
        out[0] = v;
        out[1] = force / self.body_mass - S::lit(GRAVITY);
    }

    pub(super) fn enforce_ground(&self, q: &mut [S]) {
        if q[0] < S::zero() {
            q[0] = S::zero();
            q[1] = q[1].max(S::zero());
        }
    }

    pub fn energy(&self, q: &[S]) -> S {
        let g = S::lit(GRAVITY);
        let mut e = S::lit(0.5) * self.body_mass * q[1] * q[1] + self.body_mass * g * q[0];
        if self.in_stance(q) {
            let c = self.leg_length - q[0];
            e += S::lit(0.5) * self.leg_stiffness * c * c;
        }
        e
    }

    pub(super) fn reward_done(&self, q: &[S], thrust: S) -> (S, bool) {
        let dy = q[0] - S::lit(TARGET_HEIGHT);
        let reward = S::one() - dy * dy - S::lit(0.0005) * thrust * thrust;
        let collapsed = q[0] < S::lit(0.5) * self.leg_length;
        (if collapsed { S::zero() } else { reward }, collapsed)
    }
}

pub(super) fn initial_state<S: Scalar>(rng: &mut RngStream, physics: &Physics<S>) -> Vec<S> {
    let rest = match physics {
        Physics::Hopper(p) => p.leg_length.as_f64(),
        _ => 1.0,
    };
    vec![S::lit(rng.uniform(1.05 * rest, 1.15 * rest)), S::zero()]
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::EnvInstance;

    fn env() -> EnvInstance<f64> {
        let d = Arc::new(hopper_descriptor());
        let p = d.reference_params();
        EnvInstance::new(d, p, RngStream::from_seed(0)).unwrap()
    }

    #[test]
    fn flight_is_ballistic() {
        let mut e = env();
        e.set_state(&[2.0, 1.0]).unwrap();
        let out = e.step(&[5.0]).unwrap();
        let t = 0.02;
        // semi-implicit Euler on constant acceleration: exact velocity
        assert!((out.next_state[1] - (1.0 - GRAVITY * t)).abs() < 1e-12);
        assert!((out.next_state[0] - (2.0 + t - GRAVITY * t * t * 0.5)).abs() < 1e-3);
    }

    #[test]
    fn undamped_bounce_conserves_energy_roughly() {
        let mut e = env();
        e.set_state(&[1.1, 0.0]).unwrap();
        let e0 = e.energy().unwrap();
        let mut entered_stance = false;
        for _ in 0..100 {
            e.advance_raw(&[0.0]).unwrap();
            if let crate::env::Physics::Hopper(p) = e.physics() {
                entered_stance |= p.in_stance(&e.state());
            }
        }
        assert!(entered_stance);
        let drift = (e.energy().unwrap() - e0).abs() / e0;
        assert!(drift < 0.05, "relative drift {drift}");
    }

    #[test]
    fn damping_dissipates_energy_in_stance() {
        let d = Arc::new(hopper_descriptor());
        let p = d.split(&[1.0, 1.0, 1000.0, 10.0]);
        let mut e = EnvInstance::new(d, p, RngStream::from_seed(0)).unwrap();
        e.set_state(&[1.1, 0.0]).unwrap();
        let e0 = e.energy().unwrap();
        for _ in 0..100 {
            e.advance_raw(&[0.0]).unwrap();
        }
        assert!(e.energy().unwrap() < 0.95 * e0);
    }
}
