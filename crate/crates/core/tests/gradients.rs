//! Reverse-mode gradients against central finite differences for every
//! network in the system, over 10 seeds each.

mod common;

use common::{bottleneck_case, cartpole_agent, feedforward_case, jitter, policy_case, GRAD_TOL};
use eap::agent::Method;
use eap::errorfn::{PredictorNet, Representation};
use eap::net::{FeedforwardNet, GaussianPolicyHead};
use eap::rng::RngStream;

const SEEDS: u64 = 10;

#[test]
fn policy_log_prob_gradients_match_differences() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::from_seed(100 + seed);
        for method in [Method::Eap, Method::Dr, Method::Up] {
            let mut a = cartpole_agent(method, Representation::Projected, seed);
            jitter(a.ac.policy.tensors_mut(), &mut rng);
            let worst = policy_case(&mut a.ac.policy, &mut rng);
            assert!(worst < GRAD_TOL, "{method:?} seed {seed}: {worst:e}");
        }
    }
}

#[test]
fn value_network_gradients_match_differences() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::from_seed(200 + seed);
        for method in [Method::Eap, Method::Dr, Method::Up] {
            let mut a = cartpole_agent(method, Representation::Projected, seed);
            jitter(a.ac.value.tensors_mut(), &mut rng);
            let worst = feedforward_case(&mut a.ac.value, &mut rng);
            assert!(worst < GRAD_TOL, "{method:?} seed {seed}: {worst:e}");
        }
    }
}

#[test]
fn full_error_predictor_gradients_match_differences() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::from_seed(300 + seed);
        let mut a = cartpole_agent(Method::Eap, Representation::Full, seed);
        let Some(p) = a.predictor.as_mut() else { panic!("missing predictor") };
        let PredictorNet::Full(net) = &mut p.net else { panic!("expected full predictor") };
        jitter(net.tensors_mut(), &mut rng);
        let worst = feedforward_case(net, &mut rng);
        assert!(worst < GRAD_TOL, "seed {seed}: {worst:e}");
    }
}

#[test]
fn projected_error_predictor_gradients_match_differences() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::from_seed(400 + seed);
        let mut a = cartpole_agent(Method::Eap, Representation::Projected, seed);
        let Some(p) = a.predictor.as_mut() else { panic!("missing predictor") };
        let PredictorNet::Projected(net) = &mut p.net else { panic!("expected projected predictor") };
        jitter(net.tensors_mut(), &mut rng);
        let worst = bottleneck_case(net, &mut rng);
        assert!(worst < GRAD_TOL, "seed {seed}: {worst:e}");
    }
}

#[test]
fn standalone_architectures_match_differences() {
    for seed in 0..SEEDS {
        let mut rng = RngStream::from_seed(500 + seed);
        let mut deep = FeedforwardNet::<f64>::orthogonal(&[5, 7, 6, 3], 1.0, 1.0, &mut rng).unwrap();
        let worst = feedforward_case(&mut deep, &mut rng);
        assert!(worst < GRAD_TOL, "deep seed {seed}: {worst:e}");
        let mut linear = FeedforwardNet::<f64>::orthogonal(&[4, 2], 1.0, 1.0, &mut rng).unwrap();
        let worst = feedforward_case(&mut linear, &mut rng);
        assert!(worst < GRAD_TOL, "linear seed {seed}: {worst:e}");
        let mut head = GaussianPolicyHead::<f64>::new(6, &[8], 2, &mut rng).unwrap();
        jitter(head.tensors_mut(), &mut rng);
        let worst = policy_case(&mut head, &mut rng);
        assert!(worst < GRAD_TOL, "two-action head seed {seed}: {worst:e}");
    }
}
