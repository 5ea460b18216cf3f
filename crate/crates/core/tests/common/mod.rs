//! Oracles shared by the topic suites and the acceptance run.

#![allow(dead_code)]

use std::sync::Arc;

use eap::agent::{Agent, Method};
use eap::env::{EnvDescriptor, EnvInstance, TaskKind};
use eap::errorfn::{ErrorFnConfig, PredictorNet, Representation};
use eap::net::{BottleneckNet, FeedforwardNet, GaussianPolicyHead, Gradients};
use eap::ppo::PpoConfig;
use eap::rng::RngStream;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
const BATCH: usize = 3;
/// Denominator floor: below it both gradients are numerically zero.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn randoms(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect()
}

/// Moves every parameter away from its initialization so zero-gain layers
/// do not hide upstream gradients.
pub fn jitter(tensors: Vec<&mut [f64]>, rng: &mut RngStream) {
    for t in tensors {
        for v in t.iter_mut() {
            *v += rng.uniform(-0.5, 0.5);
        }
    }
}

/// Worst relative error of `grads` against central differences of `loss`,
/// where `tensors` exposes the parameters in the same order as `grads`.
fn check<T>(
    model: &mut T,
    grads: &Gradients<f64>,
    tensors: impl Fn(&mut T) -> Vec<&mut [f64]>,
    loss: impl Fn(&T) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let shapes: Vec<usize> = tensors(model).iter().map(|t| t.len()).collect();
    assert_eq!(shapes, grads.tensors.iter().map(Vec::len).collect::<Vec<_>>());
    for (ti, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let orig = tensors(model)[ti][i];
            tensors(model)[ti][i] = orig + FD_STEP;
            let up = loss(model);
            tensors(model)[ti][i] = orig - FD_STEP;
            let down = loss(model);
            tensors(model)[ti][i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.tensors[ti][i], numeric));
        }
    }
    worst
}

fn input_check(x: &[f64], dx: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += FD_STEP;
        let mut xm = x.to_vec();
        xm[i] -= FD_STEP;
        let numeric = (loss(&xp) - loss(&xm)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dx[i], numeric));
    }
    worst
}

/// Weighted sum of outputs as a scalar loss; checks parameter and input
/// gradients.
pub fn feedforward_case(net: &mut FeedforwardNet<f64>, rng: &mut RngStream) -> f64 {
    let x = randoms(rng, BATCH * net.input_dim(), 1.0);
    let w = randoms(rng, BATCH * net.output_dim(), 1.0);
    let tape = net.forward_tape(&x, BATCH).unwrap();
    let (grads, dx) = net.backward(&tape, &w).unwrap();
    let loss = |n: &FeedforwardNet<f64>, x: &[f64]| -> f64 {
        let out = n.forward_tape(x, BATCH).unwrap();
        out.output().iter().zip(&w).map(|(o, w)| o * w).sum()
    };
    let params = check(net, &grads, |n| n.tensors_mut(), |n| loss(n, &x));
    params.max(input_check(&x, &dx, |x| loss(net, x)))
}

pub fn bottleneck_case(net: &mut BottleneckNet<f64>, rng: &mut RngStream) -> f64 {
    let x = randoms(rng, BATCH * net.encoder.input_dim(), 1.0);
    let w = randoms(rng, BATCH * net.decoder.output_dim(), 1.0);
    let tape = net.forward_tape(&x, BATCH).unwrap();
    let (grads, dx) = net.backward(&tape, &w).unwrap();
    let loss = |n: &BottleneckNet<f64>, x: &[f64]| -> f64 {
        let t = n.forward_tape(x, BATCH).unwrap();
        t.decoder.output().iter().zip(&w).map(|(o, w)| o * w).sum()
    };
    let params = check(net, &grads, |n| n.tensors_mut(), |n| loss(n, &x));
    params.max(input_check(&x, &dx, |x| loss(net, x)))
}

/// `sum_b w_b log pi(a_b | o_b) + w_ent H` for the Gaussian policy, log-std included.
pub fn policy_case(policy: &mut GaussianPolicyHead<f64>, rng: &mut RngStream) -> f64 {
    let (od, ad) = (policy.obs_dim(), policy.action_dim());
    let obs = randoms(rng, BATCH * od, 1.0);
    let actions = randoms(rng, BATCH * ad, 1.5);
    let weights = randoms(rng, BATCH, 1.0);
    let ent_w = rng.uniform(-0.5, 0.5);
    let tape = policy.mean_net.forward_tape(&obs, BATCH).unwrap();
    let grads = policy.log_prob_gradients(&tape, &actions, &weights, ent_w).unwrap();
    let loss = |p: &GaussianPolicyHead<f64>| -> f64 {
        let t = p.mean_net.forward_tape(&obs, BATCH).unwrap();
        let lp = p.batch_log_probs(&t, &actions);
        lp.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>() + ent_w * p.entropy()
    };
    check(policy, &grads, |p| p.tensors_mut(), loss)
}

pub fn cartpole_agent(method: Method, representation: Representation, seed: u64) -> Agent<f64> {
    let d = TaskKind::CartPole.descriptor();
    let ef = ErrorFnConfig { representation, ..ErrorFnConfig::default() };
    let mut rng = RngStream::from_seed(seed);
    Agent::new(method, &d, &[32, 16], &PpoConfig::default(), &ef, &mut rng).unwrap()
}

/// Worst error per architecture over one seed: policy heads and critics of
/// every method, both predictor variants and a standalone deep net.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::from_seed(1000 + seed);
    let mut out = Vec::new();
    for (name, method) in [("eap", Method::Eap), ("dr", Method::Dr), ("up", Method::Up)] {
        let mut a = cartpole_agent(method, Representation::Projected, seed);
        jitter(a.ac.policy.tensors_mut(), &mut rng);
        jitter(a.ac.value.tensors_mut(), &mut rng);
        let p = policy_case(&mut a.ac.policy, &mut rng);
        let v = feedforward_case(&mut a.ac.value, &mut rng);
        out.push((name, p.max(v)));
    }
    let mut a = cartpole_agent(Method::Eap, Representation::Full, seed);
    let PredictorNet::Full(net) = &mut a.predictor.as_mut().unwrap().net else { unreachable!() };
    jitter(net.tensors_mut(), &mut rng);
    out.push(("full predictor", feedforward_case(net, &mut rng)));
    let mut a = cartpole_agent(Method::Eap, Representation::Projected, seed);
    let PredictorNet::Projected(net) = &mut a.predictor.as_mut().unwrap().net else { unreachable!() };
    jitter(net.tensors_mut(), &mut rng);
    out.push(("projected predictor", bottleneck_case(net, &mut rng)));
    let mut deep = FeedforwardNet::<f64>::orthogonal(&[5, 7, 6, 3], 1.0, 1.0, &mut rng).unwrap();
    out.push(("deep net", feedforward_case(&mut deep, &mut rng)));
    let mut head = GaussianPolicyHead::<f64>::new(6, &[8], 2, &mut rng).unwrap();
    jitter(head.tensors_mut(), &mut rng);
    out.push(("two-action head", policy_case(&mut head, &mut rng)));
    out
}

pub const PHYSICS_REFINE: usize = 100;

fn rk4(q: &mut [f64], h: f64, f: &dyn Fn(&[f64]) -> Vec<f64>) {
    let add = |q: &[f64], k: &[f64], s: f64| -> Vec<f64> { q.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(q);
    let k2 = f(&add(q, &k1, h / 2.0));
    let k3 = f(&add(q, &k2, h / 2.0));
    let k4 = f(&add(q, &k3, h));
    for i in 0..q.len() {
        q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// One control step with `REFINE` times the simulator's sub-step count.
pub fn fine_step(d: &EnvDescriptor, q: &mut [f64], f: &dyn Fn(&[f64]) -> Vec<f64>) {
    let n = d.substeps * PHYSICS_REFINE;
    let h = d.dt / n as f64;
    for _ in 0..n {
        rk4(q, h, f);
    }
}

/// Cart and pole as a two-degree-of-freedom Lagrangian system: the mass
/// matrix is solved directly rather than through the eliminated form.
pub fn cartpole_accel(p: &[f64], force: f64, q: &[f64]) -> Vec<f64> {
    let (len, mp, mc, b, mu_r, c) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let g = 9.8;
    let l = len / 2.0;
    let (xd, th, thd) = (q[1], q[2], q[3]);
    let (s, co) = th.sin_cos();
    let tau = -b * thd - mu_r * mp * g * l * (thd / 0.01).tanh();
    let f = force - c * xd;
    // [mc+mp, mp l cos; mp l cos, 4/3 mp l^2] [xdd; thdd] = rhs
    let (a11, a12, a22) = (mc + mp, mp * l * co, 4.0 / 3.0 * mp * l * l);
    let r1 = f + mp * l * thd * thd * s;
    let r2 = mp * g * l * s + tau;
    let det = a11 * a22 - a12 * a12;
    let xdd = (r1 * a22 - a12 * r2) / det;
    let thdd = (a11 * r2 - a12 * r1) / det;
    vec![xd, xdd, thd, thdd]
}

/// Rod pinned at one end, angle from upright.
pub fn pendulum_accel(p: &[f64], torque: f64, q: &[f64]) -> Vec<f64> {
    let (len, m, b, fr, gs) = (p[0], p[1], p[2], p[3], p[4]);
    let g = 10.0 * gs;
    let inertia = m * len * len / 3.0;
    let (th, w) = (q[0], q[1]);
    let net = m * g * len / 2.0 * th.sin() + torque - b * w - fr * (w / 0.01).tanh();
    vec![w, net / inertia]
}

fn draw_params(d: &EnvDescriptor, rng: &mut RngStream) -> Vec<f64> {
    d.param_specs.iter().map(|p| rng.uniform(p.test_range.lo, p.test_range.hi)).collect()
}

/// Worst per-component one-step error over `n` random (state, action,
/// params) draws.
pub fn physics_battery(kind: TaskKind, n: usize, seed: u64) -> f64 {
    let d = Arc::new(kind.descriptor());
    let mut rng = RngStream::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let params = draw_params(&d, &mut rng);
        let mut env = EnvInstance::<f64>::new(d.clone(), d.split(&params), RngStream::from_seed(0)).unwrap();
        let (got, want) = match kind {
            TaskKind::CartPole => {
                let q0: Vec<f64> = [2.0, 2.0, 0.2, 2.0].iter().map(|&r| rng.uniform(-r, r)).collect();
                let u = rng.uniform(-10.0, 10.0);
                let got = env.simulate_from(&q0, &[u]).unwrap();
                let mut want = q0.clone();
                fine_step(&d, &mut want, &|q| cartpole_accel(&params, u, q));
                (got, want)
            }
            _ => {
                let th = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
                let w = rng.uniform(-6.0, 6.0);
                let u = rng.uniform(-2.0, 2.0);
                let got = env.simulate_from(&[th.cos(), th.sin(), w], &[u]).unwrap();
                let mut q = vec![th, w];
                fine_step(&d, &mut q, &|q| pendulum_accel(&params, u, q));
                (got, vec![q[0].cos(), q[0].sin(), q[1]])
            }
        };
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
