use eap::net::GaussianPolicyHead;
use eap::ppo::{compute_gae, ActorCritic, PpoConfig, Transition};
use eap::rng::RngStream;
use proptest::prelude::*;

fn normal_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 on erf.
    let z = x.abs() / 2f64.sqrt();
    let t = 1.0 / (1.0 + 0.3275911 * z);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    if x >= 0.0 { 0.5 * (1.0 + erf) } else { 0.5 * (1.0 - erf) }
}

fn bandit_batch(ac: &ActorCritic<f64>, n: usize, rng: &mut RngStream) -> Vec<Transition<f64>> {
    (0..n)
        .map(|i| {
            let state = i % 2;
            let obs = if state == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            let (action, log_prob) = ac.policy.sample(&obs, rng).unwrap();
            let good = if state == 0 { action[0] > 0.0 } else { action[0] < 0.0 };
            Transition {
                obs: obs.clone(),
                state: obs,
                mu: vec![],
                action,
                reward: if good { 1.0 } else { 0.0 },
                next_state: vec![0.0, 0.0],
                log_prob,
                done: true,
                cut: false,
                bootstrap_obs: None,
            }
        })
        .collect()
}

fn optimal_probability(head: &GaussianPolicyHead<f64>, obs: &[f64], sign: f64) -> f64 {
    let m = head.mean(obs).unwrap()[0];
    normal_cdf(sign * m / head.std()[0])
}

#[test]
fn two_state_bandit_learns_optimal_actions() {
    let config = PpoConfig { rollout_steps: 256, ..PpoConfig::default() };
    let mut rng = RngStream::from_seed(11);
    let mut ac = ActorCritic::<f64>::new(2, &[16], 1, &config, &mut rng).unwrap();
    let mut sample_rng = RngStream::from_seed(12);
    let mut mb_rng = RngStream::from_seed(13);
    for _ in 0..50 {
        let batch = bandit_batch(&ac, config.rollout_steps, &mut sample_rng);
        ac.update(&batch, &config, &mut mb_rng).unwrap();
    }
    let p0 = optimal_probability(&ac.policy, &[1.0, 0.0], 1.0);
    let p1 = optimal_probability(&ac.policy, &[0.0, 1.0], -1.0);
    assert!(p0 > 0.9 && p1 > 0.9, "P(optimal) = {p0:.3}, {p1:.3}");
}

#[test]
fn unchanged_policy_reproduces_stored_log_probs() {
    let config = PpoConfig::default();
    let mut rng = RngStream::from_seed(3);
    let ac = ActorCritic::<f64>::new(2, &[8], 1, &config, &mut rng).unwrap();
    let batch = bandit_batch(&ac, 128, &mut RngStream::from_seed(4));
    for t in &batch {
        let lp = ac.policy.log_prob(&t.obs, &t.action).unwrap();
        assert!((lp - t.log_prob).abs() < 1e-10);
    }
    assert!(ac.approx_kl(&batch).unwrap().abs() < 1e-10);
}

#[test]
fn first_minibatch_sees_unit_ratios_and_zero_mean_surrogate() {
    // One minibatch covering the whole buffer: the objective at the behaviour
    // policy is the mean normalized advantage.
    let config = PpoConfig { epochs: 1, minibatch_size: 128, rollout_steps: 128, ..PpoConfig::default() };
    let mut rng = RngStream::from_seed(5);
    let mut ac = ActorCritic::<f64>::new(2, &[8], 1, &config, &mut rng).unwrap();
    let batch = bandit_batch(&ac, 128, &mut RngStream::from_seed(6));
    let stats = ac.update(&batch, &config, &mut RngStream::from_seed(7)).unwrap();
    assert!(stats.surrogate.abs() < 1e-9, "surrogate {}", stats.surrogate);
    assert_eq!(stats.clip_fraction, 0.0);
}

#[test]
fn value_loss_decreases_on_a_frozen_buffer() {
    let config = PpoConfig {
        epochs: 1,
        minibatch_size: 256,
        rollout_steps: 256,
        policy_lr: 1e-12,
        ..PpoConfig::default()
    };
    let mut rng = RngStream::from_seed(8);
    let mut ac = ActorCritic::<f64>::new(2, &[16], 1, &config, &mut rng).unwrap();
    let batch = bandit_batch(&ac, 256, &mut RngStream::from_seed(9));
    let mut mb = RngStream::from_seed(10);
    let mut last = f64::INFINITY;
    for _ in 0..20 {
        let s = ac.update(&batch, &config, &mut mb).unwrap();
        assert!(s.value_loss < last, "{} !< {}", s.value_loss, last);
        last = s.value_loss;
    }
}

#[test]
fn small_buffers_are_rejected() {
    let config = PpoConfig::default();
    let mut rng = RngStream::from_seed(1);
    let mut ac = ActorCritic::<f64>::new(2, &[8], 1, &config, &mut rng).unwrap();
    let batch = bandit_batch(&ac, 10, &mut RngStream::from_seed(2));
    assert!(ac.update(&batch, &config, &mut rng).is_err());
}

proptest! {
    #[test]
    fn undiscounted_gae_equals_suffix_sums(rewards in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
        let n = rewards.len();
        let zeros = vec![0.0; n];
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let (adv, ret) = compute_gae(&rewards, &zeros, &zeros, &dones, &dones, 1.0, 1.0).unwrap();
        for t in 0..n {
            let suffix: f64 = rewards[t..].iter().sum();
            prop_assert!((adv[t] - suffix).abs() < 1e-9);
            prop_assert!((ret[t] - suffix).abs() < 1e-9);
        }
    }

    #[test]
    fn episode_boundaries_stop_credit(rewards in proptest::collection::vec(-5.0f64..5.0, 2..30), split in 0usize..29) {
        let n = rewards.len();
        let split = split % (n - 1);
        let zeros = vec![0.0; n];
        let mut dones = vec![false; n];
        dones[split] = true;
        dones[n - 1] = true;
        let (adv, _) = compute_gae(&rewards, &zeros, &zeros, &dones, &dones, 1.0, 1.0).unwrap();
        let first: f64 = rewards[..=split].iter().sum();
        prop_assert!((adv[0] - first).abs() < 1e-9);
    }
}
