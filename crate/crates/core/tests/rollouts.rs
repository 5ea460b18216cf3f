//! The per-step query chain and training-loop bookkeeping.

use std::sync::Arc;

use eap::agent::{Agent, ErrorMode, Method};
use eap::env::{sample_population, EnvDescriptor, EnvInstance, EnvPopulation, TaskKind};
use eap::errorfn::{ErrorFnConfig, PredictorNet, Representation};
use eap::ppo::PpoConfig;
use eap::rng::RngStream;
use eap::rollout::generate_rollouts;
use eap::train::{Phase, TrainSettings, Trainer};

const STEPS: usize = 600;

struct Plain {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    returns: Vec<f64>,
}

/// Independent rollout of the policy on `(s, mu, 0)` inputs.
fn plain_rollout(a: &Agent<f64>, env: &mut EnvInstance<f64>, rng: &mut RngStream) -> Plain {
    let d = env.descriptor().clone();
    let mu = env.params().mu.clone();
    let mut out = Plain { obs: vec![], actions: vec![], log_probs: vec![], rewards: vec![], returns: vec![] };
    let mut s = env.reset();
    let mut total = 0.0;
    for _ in 0..STEPS {
        let mut obs = s.clone();
        obs.extend(a.scaler.mu(&mu));
        obs.extend(vec![0.0; a.e_dim]);
        let mean = a.ac.policy.mean(&obs).unwrap();
        let (action, lp) = a.ac.policy.sample_around(&mean, rng);
        let step = env.step(&d.scale_action(&action)).unwrap();
        total += step.reward;
        out.obs.push(obs);
        out.actions.push(action);
        out.log_probs.push(lp);
        out.rewards.push(step.reward);
        s = step.next_state;
        if step.done || step.truncated {
            out.returns.push(total);
            total = 0.0;
            s = env.reset();
        }
    }
    out
}

fn eap_agent(d: &EnvDescriptor, rep: Representation, seed: u64) -> Agent<f64> {
    let ef = ErrorFnConfig { representation: rep, ..ErrorFnConfig::default() };
    Agent::new(Method::Eap, d, &[32, 16], &PpoConfig::default(), &ef, &mut RngStream::from_seed(seed)).unwrap()
}

fn instance(d: &Arc<EnvDescriptor>, seed: u64) -> EnvInstance<f64> {
    let mut rng = RngStream::from_seed(seed);
    let p: Vec<f64> = d.param_specs.iter().map(|s| rng.uniform(s.train_range.lo, s.train_range.hi)).collect();
    EnvInstance::new(d.clone(), d.split(&p), RngStream::from_seed(seed + 1000)).unwrap()
}

#[test]
fn zero_predictor_rollouts_equal_plain_policy_rollouts() {
    for kind in [TaskKind::CartPole, TaskKind::Pendulum] {
        let d = Arc::new(kind.descriptor());
        for rep in [Representation::Full, Representation::Projected] {
            for seed in 0..5 {
                let a = eap_agent(&d, rep, seed);
                let batch = generate_rollouts(
                    &a,
                    &mut instance(&d, seed),
                    STEPS,
                    ErrorMode::Predicted,
                    &mut RngStream::from_seed(seed + 50),
                    &mut RngStream::from_seed(seed + 90),
                )
                .unwrap();
                let plain = plain_rollout(&a, &mut instance(&d, seed), &mut RngStream::from_seed(seed + 50));
                assert_eq!(batch.len(), STEPS);
                for (i, t) in batch.transitions.iter().enumerate() {
                    assert_eq!(t.obs, plain.obs[i], "{kind:?} {rep:?} seed {seed} step {i}");
                    assert_eq!(t.action, plain.actions[i]);
                    assert_eq!(t.log_prob, plain.log_probs[i]);
                    assert_eq!(t.reward, plain.rewards[i]);
                }
                assert_eq!(batch.episode_returns, plain.returns);
                assert_eq!(batch.faults, 0);
            }
        }
    }
}

#[test]
fn uncorrected_draws_do_not_touch_the_policy_stream() {
    let d = Arc::new(TaskKind::CartPole.descriptor());
    let mut a = eap_agent(&d, Representation::Full, 3);
    // A live predictor, so the executed action really depends on e.
    let Some(p) = a.predictor.as_mut() else { panic!("missing predictor") };
    let PredictorNet::Full(net) = &mut p.net else { panic!("expected full predictor") };
    let mut rng = RngStream::from_seed(8);
    for t in net.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.uniform(-0.5, 0.5);
        }
    }
    let run = |uncorrected_seed: u64, errors: ErrorMode| {
        generate_rollouts(
            &a,
            &mut instance(&d, 1),
            200,
            errors,
            &mut RngStream::from_seed(4),
            &mut RngStream::from_seed(uncorrected_seed),
        )
        .unwrap()
    };
    let zero = run(1, ErrorMode::Zero);
    assert_eq!(zero, run(2, ErrorMode::Zero));
    let live = run(1, ErrorMode::Predicted);
    assert_ne!(live.transitions[0].obs, zero.transitions[0].obs);
    assert_ne!(live, run(2, ErrorMode::Predicted));
}

fn population(d: &EnvDescriptor, seed: u64) -> EnvPopulation {
    sample_population(d, 6, 3, 4, &mut RngStream::from_seed(seed)).unwrap()
}

fn trainer(method: Method, pop: EnvPopulation, budget: u64) -> Trainer<f64> {
    let d = TaskKind::CartPole.descriptor();
    let settings = TrainSettings { budget_steps: budget, pretrain_max_steps: 4096, ..TrainSettings::for_task(d.kind) };
    let ppo = PpoConfig { rollout_steps: 512, epochs: 2, ..PpoConfig::default() };
    let ef = ErrorFnConfig { samples_per_refresh: 32, train_steps: 5, ..ErrorFnConfig::default() };
    Trainer::new(method, 7, settings, ppo, ef, d, pop).unwrap()
}

#[test]
fn sample_accounting_covers_every_source() {
    let d = TaskKind::CartPole.descriptor();
    for method in [Method::Eap, Method::Dr, Method::Up] {
        let mut t = trainer(method, population(&d, 1), 12_000);
        let mut rows = Vec::new();
        t.run(|_, r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(t.phase, Phase::Done);
        let s = t.samples;
        assert!(s.total() <= 12_000, "{method:?} overspent: {s:?}");
        let main = rows.iter().filter(|r| r.phase == "main").count() as u64;
        let refresh = 2 * 5 * 32;
        match method {
            Method::Eap => {
                assert!(s.pretrain_steps > 0);
                assert_eq!(s.error_steps, main * refresh);
            }
            _ => {
                assert_eq!(s.pretrain_steps, 0);
                assert_eq!(s.error_steps, 0);
            }
        }
        // Whatever is left could not fund another update.
        let min_update = if method == Method::Eap { refresh } else { 0 } + 64;
        assert!(12_000 - s.total() < min_update + 512, "{method:?} stopped early: {s:?}");
        let last = rows.last().unwrap();
        assert_eq!(last.total_steps, s.total());
        assert_eq!(last.pretrain_steps + last.policy_steps + last.error_steps, last.total_steps);
        for w in rows.windows(2) {
            assert!(w[1].total_steps > w[0].total_steps);
        }
    }
}

#[test]
fn reference_entry_is_never_trained_or_validated_on() {
    let d = TaskKind::CartPole.descriptor();
    let pop = population(&d, 2);
    let reference = pop.training()[0];
    let pop = pop.with_reference_index(reference).unwrap();
    assert!(!pop.training().contains(&reference));
    let mut t = trainer(Method::Eap, pop, 30_000);
    let mut seen = Vec::new();
    t.run(|_, r| {
        seen.push((r.env_index, r.validation_index));
        Ok(())
    })
    .unwrap();
    assert!(seen.iter().filter(|(e, _)| *e >= 0).count() >= 10);
    for (e, v) in seen {
        assert_ne!(e, reference as i64);
        assert_ne!(v, reference as i64);
    }
}

#[test]
fn zero_train_steps_keeps_the_predictor_silent() {
    let d = TaskKind::CartPole.descriptor();
    let mut t = trainer(Method::Eap, population(&d, 3), 12_000);
    t.error_fn.train_steps = 0;
    t.run(|_, _| Ok(())).unwrap();
    assert!(t.dataset.as_ref().unwrap().len() > 0);
    let p = t.agent.predictor.as_ref().unwrap();
    let e = p.policy_features(&[0.1, -0.2, 0.05, 0.3], &[0.5], &t.population.reference_params(&d).mu).unwrap();
    assert!(e.iter().all(|v| *v == 0.0));
}
