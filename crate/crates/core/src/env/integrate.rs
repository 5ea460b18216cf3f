use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Largest integrated state the fixed-size buffers hold.
pub const MAX_DIM: usize = 8;

/// Integration scheme applied on each control sub-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Velocities first, then positions from the updated velocities.
    SemiImplicitEuler,
    /// Classic fourth-order Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) with error control; refines itself through
    /// stiff stretches such as smoothed Coulomb friction near zero velocity.
    #[default]
    Dopri45,
}

/// Absolute and relative per-step error tolerance of the adaptive scheme.
pub const ADAPTIVE_TOL: f64 = 1e-9;
const MAX_ADAPTIVE_STEPS: usize = 100_000;

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates `q` over `span` with Dormand-Prince steps, starting from a
/// single step and adapting to keep each step's error below [`ADAPTIVE_TOL`].
fn dopri45<S, F>(q: &mut [S], span: S, deriv: &mut F)
where
    S: Scalar,
    F: FnMut(&[S], &mut [S]),
{
    let n = q.len();
    let tol = S::lit(ADAPTIVE_TOL);
    let mut t = S::zero();
    let mut h = span;
    let min_h = span * S::lit(1e-9);
    let mut k = [[S::zero(); MAX_DIM]; 7];
    let mut tmp = [S::zero(); MAX_DIM];
    let mut next = [S::zero(); MAX_DIM];
    for _ in 0..MAX_ADAPTIVE_STEPS {
        let left = span - t;
        if left <= S::zero() {
            return;
        }
        let last = h >= left;
        if last {
            h = left;
        }
        deriv(q, &mut k[0][..n]);
        for stage in 0..6 {
            for i in 0..n {
                let mut acc = S::zero();
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += S::lit(DP_A[stage][j]) * kj[i];
                }
                tmp[i] = q[i] + h * acc;
            }
            deriv(&tmp[..n], &mut k[stage + 1][..n]);
        }
        // Stage 7 was evaluated at the fifth-order solution held in `tmp`.
        next[..n].copy_from_slice(&tmp[..n]);
        let mut err = S::zero();
        for i in 0..n {
            let mut e = S::zero();
            for (j, kj) in k.iter().enumerate() {
                e += S::lit(DP_E[j]) * kj[i];
            }
            let scale = tol + tol * q[i].abs().max(next[i].abs());
            let r = h * e / scale;
            err += r * r;
        }
        err = (err / S::lit(n as f64)).sqrt();
        if err <= S::one() || h <= min_h {
            q[..n].copy_from_slice(&next[..n]);
            t = if last { span } else { t + h };
        }
        let factor = if err == S::zero() {
            S::lit(5.0)
        } else {
            (S::lit(0.9) * err.powf(S::lit(-0.2))).max(S::lit(0.2)).min(S::lit(5.0))
        };
        h = (h * factor).max(min_h);
    }
}

impl Integrator {
    /// Advances `q` by `h`. `dof_pairs` lists `(position, velocity)` index
    /// pairs; only the semi-implicit scheme needs them.
    pub fn advance<S, F>(self, q: &mut [S], h: S, mut deriv: F, dof_pairs: &[(usize, usize)])
    where
        S: Scalar,
        F: FnMut(&[S], &mut [S]),
    {
        let n = q.len();
        assert!(n <= MAX_DIM, "integrator state has {n} components, at most {MAX_DIM} supported");
        match self {
            Integrator::SemiImplicitEuler => {
                let mut d = [S::zero(); MAX_DIM];
                deriv(q, &mut d[..n]);
                for &(p, v) in dof_pairs {
                    q[v] += h * d[v];
                    q[p] += h * q[v];
                }
            }
            Integrator::Rk4 => {
                let half = h * S::lit(0.5);
                let mut k1 = [S::zero(); MAX_DIM];
                let mut k2 = [S::zero(); MAX_DIM];
                let mut k3 = [S::zero(); MAX_DIM];
                let mut k4 = [S::zero(); MAX_DIM];
                let mut tmp = [S::zero(); MAX_DIM];
                deriv(q, &mut k1[..n]);
                for i in 0..n {
                    tmp[i] = q[i] + half * k1[i];
                }
                deriv(&tmp[..n], &mut k2[..n]);
                for i in 0..n {
                    tmp[i] = q[i] + half * k2[i];
                }
                deriv(&tmp[..n], &mut k3[..n]);
                for i in 0..n {
                    tmp[i] = q[i] + h * k3[i];
                }
                deriv(&tmp[..n], &mut k4[..n]);
                let sixth = h / S::lit(6.0);
                for i in 0..n {
                    q[i] += sixth * (k1[i] + S::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
                }
            }
            Integrator::Dopri45 => dopri45(q, h, &mut deriv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Harmonic oscillator x'' = -x from (1, 0); exact solution (cos t, -sin t).
    fn run(scheme: Integrator, steps: usize, t_end: f64) -> [f64; 2] {
        let mut q = [1.0, 0.0];
        let h = t_end / steps as f64;
        for _ in 0..steps {
            scheme.advance(&mut q, h, |q, d| { d[0] = q[1]; d[1] = -q[0]; }, &[(0, 1)]);
        }
        q
    }

    #[test]
    fn adaptive_scheme_meets_its_tolerance() {
        let q = run(Integrator::Dopri45, 1, 1.0);
        assert!((q[0] - 1f64.cos()).abs() < 1e-8);
        assert!((q[1] + 1f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn adaptive_scheme_resolves_stiff_friction() {
        // v' = -tanh(v / 0.01) from v = 0.02, against 100k fixed RK4 steps.
        let f = |q: &[f64], d: &mut [f64]| d[0] = -(q[0] / 0.01).tanh();
        let mut q = [0.02f64];
        Integrator::Dopri45.advance(&mut q, 0.05, f, &[]);
        let mut r = [0.02f64];
        for _ in 0..100_000 {
            Integrator::Rk4.advance(&mut r, 0.05 / 100_000.0, f, &[]);
        }
        assert!((q[0] - r[0]).abs() < 1e-8, "{} vs {}", q[0], r[0]);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let e1 = (run(Integrator::Rk4, 20, 1.0)[0] - 1f64.cos()).abs();
        let e2 = (run(Integrator::Rk4, 40, 1.0)[0] - 1f64.cos()).abs();
        let ratio = e1 / e2;
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn semi_implicit_euler_is_first_order_and_bounded() {
        let e1 = (run(Integrator::SemiImplicitEuler, 200, 1.0)[0] - 1f64.cos()).abs();
        let e2 = (run(Integrator::SemiImplicitEuler, 400, 1.0)[0] - 1f64.cos()).abs();
        assert!(e1 / e2 > 1.7 && e1 / e2 < 2.3);
        // symplectic: energy stays bounded over many periods
        let q = run(Integrator::SemiImplicitEuler, 10_000, 100.0);
        let energy = 0.5 * (q[0] * q[0] + q[1] * q[1]);
        assert!((energy - 0.5).abs() < 0.01);
    }
}
