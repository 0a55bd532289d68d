use mfswarm::envs::{EnvConfig, EnvKind, RlEnv, RlSpec, RlStep};
use mfswarm::policy_nn::{init_params, log_prob, ActionMode, AdamState, PolicyShape, SquashSpec};
use mfswarm::ppo::*;
use mfswarm::{Executor, Result, SeedStream};

fn hand_trajectory(rewards: &[f64], values: &[f64], terminal: bool) -> Trajectory {
    let mut t = Trajectory::new(1, 1);
    t.rewards = rewards.to_vec();
    t.values = values.to_vec();
    t.segments.push(Segment {
        start: 0,
        len: rewards.len(),
        bootstrap: 0.0,
        terminal,
    });
    t
}

#[test]
fn gae_three_step_hand_values() {
    let g = compute_gae(&hand_trajectory(&[1.0; 3], &[0.0; 3], true), 0.99, 1.0).unwrap();
    assert_eq!(g.advantages, vec![2.9701, 1.99, 1.0]);
    assert_eq!(g.targets, g.advantages);
}

#[test]
fn gae_with_lambda_one_is_return_minus_baseline() {
    let r = [0.3, -1.2, 0.8, 2.0, -0.1];
    let v = [0.5, 0.1, -0.4, 0.9, 0.2];
    let g = compute_gae(&hand_trajectory(&r, &v, true), 0.9, 1.0).unwrap();
    for t in 0..5 {
        let ret: f64 = (t..5).map(|k| 0.9f64.powi((k - t) as i32) * r[k]).sum();
        assert!((g.advantages[t] - (ret - v[t])).abs() < 1e-12);
    }
}

/// Small random batch for gradient checks.
fn toy_batch(seed: u64, n: usize, obs_dim: usize, act_dim: usize) -> (mfswarm::policy_nn::PolicyParams, Trajectory, Vec<f64>, Vec<f64>) {
    use rand::Rng;
    let shape = PolicyShape::new(obs_dim, act_dim).with_hidden(vec![4, 4]);
    let mut params = init_params(&shape, SeedStream::new(seed)).unwrap();
    let mut rng = SeedStream::new(seed).named("toy").rng();
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let mut traj = Trajectory::new(obs_dim, act_dim);
    traj.log_std = params.log_std.iter().map(|l| l + rng.random_range(-0.1..0.1)).collect();
    for _ in 0..n {
        let o: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (m, _) = params.act(&o).unwrap();
        let old: Vec<f64> = m.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
        let a: Vec<f64> = old.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        traj.log_probs.push(log_prob(&old, &traj.log_std, &a));
        traj.obs.extend(o);
        traj.means.extend(old);
        traj.actions.extend(a);
        traj.rewards.push(0.0);
        traj.values.push(0.0);
    }
    traj.segments.push(Segment {
        start: 0,
        len: n,
        bootstrap: 0.0,
        terminal: true,
    });
    let adv = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (params, traj, adv, targets)
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = PpoConfig {
        clip: 10.0,
        ..Default::default()
    };
    for seed in 0..100 {
        let (params, traj, adv, targets) = toy_batch(seed, 6, 3, 2);
        let idx: Vec<usize> = (0..6).collect();
        let beta = 0.3;
        let total = |p: &mfswarm::policy_nn::PolicyParams| {
            let lg = loss_and_grad(p, &traj, &adv, &targets, &idx, &cfg, beta).unwrap();
            lg.policy_loss + beta * lg.kl + cfg.value_loss_coeff * lg.value_loss
        };
        let analytic = loss_and_grad(&params, &traj, &adv, &targets, &idx, &cfg, beta).unwrap().grads;
        let flat: Vec<f64> = analytic.tensors().concat();
        let h = 1e-5;
        let mut k = 0;
        for t in 0..params.tensors().len() {
            for e in 0..params.tensors()[t].len() {
                let mut p = params.clone();
                p.tensors_mut()[t][e] += h;
                let mut m = params.clone();
                m.tensors_mut()[t][e] -= h;
                let fd = (total(&p) - total(&m)) / (2.0 * h);
                let err = (flat[k] - fd).abs() / flat[k].abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-4, "seed {seed} tensor {t} entry {e}: {} vs {fd}", flat[k]);
                k += 1;
            }
        }
    }
}

#[test]
fn identical_policy_has_unit_ratio_and_zero_kl() {
    let (params, mut traj, adv, targets) = toy_batch(3, 8, 3, 2);
    let idx: Vec<usize> = (0..8).collect();
    traj.log_std = params.log_std.to_vec();
    traj.means.clear();
    traj.log_probs.clear();
    for r in 0..8 {
        let (m, _) = params.act(&traj.obs[r * 3..r * 3 + 3]).unwrap();
        traj.log_probs.push(log_prob(&m, &traj.log_std, &traj.actions[r * 2..r * 2 + 2]));
        traj.means.extend(m);
    }
    let lg = loss_and_grad(&params, &traj, &adv, &targets, &idx, &PpoConfig::default(), 0.03).unwrap();
    assert!(lg.kl.abs() < 1e-15);
    let mean_adv = adv.iter().sum::<f64>() / 8.0;
    assert!((lg.policy_loss + mean_adv).abs() < 1e-12);
    assert_eq!(lg.clip_fraction, 0.0);
}

#[test]
fn zero_advantage_leaves_only_value_gradient() {
    let (mut params, mut traj, _, targets) = toy_batch(4, 8, 3, 2);
    let idx: Vec<usize> = (0..8).collect();
    // identical policy so the KL gradient vanishes too
    traj.log_std = params.log_std.to_vec();
    traj.means.clear();
    for r in 0..8 {
        let (m, _) = params.act(&traj.obs[r * 3..r * 3 + 3]).unwrap();
        traj.means.extend(m);
    }
    let lg = loss_and_grad(&params, &traj, &[0.0; 8], &targets, &idx, &PpoConfig::default(), 0.03).unwrap();
    let split = params.policy_tensor_count();
    assert!(lg.grads.tensors()[..split].iter().all(|t| t.iter().all(|g| g.abs() < 1e-15)));
    assert!(lg.grads.tensors()[split..].iter().any(|t| t.iter().any(|g| *g != 0.0)));
    params.log_std.fill(0.0);
}

#[test]
fn clipped_branch_contributes_no_policy_gradient() {
    let (params, mut traj, _, targets) = toy_batch(5, 2, 3, 2);
    traj.log_std = params.log_std.to_vec();
    traj.means.clear();
    traj.log_probs.clear();
    let mut adv = vec![0.0; 2];
    for r in 0..2 {
        let (m, _) = params.act(&traj.obs[r * 3..r * 3 + 3]).unwrap();
        let lp = log_prob(&m, &traj.log_std, &traj.actions[r * 2..r * 2 + 2]);
        // ratio e^{0.5} > 1.2 with a positive advantage, and e^{-0.5} < 0.8 with a negative one
        traj.log_probs.push(if r == 0 { lp - 0.5 } else { lp + 0.5 });
        adv[r] = if r == 0 { 1.0 } else { -1.0 };
        traj.means.extend(m);
    }
    let lg = loss_and_grad(&params, &traj, &adv, &targets, &[0, 1], &PpoConfig::default(), 0.0).unwrap();
    assert_eq!(lg.clip_fraction, 1.0);
    let split = params.policy_tensor_count();
    assert!(lg.grads.tensors()[..split].iter().all(|t| t.iter().all(|&g| g == 0.0)));
}

#[test]
fn surrogate_ignores_constant_advantage_shift() {
    let (params, traj, adv, targets) = toy_batch(6, 10, 3, 2);
    let idx: Vec<usize> = (0..10).collect();
    let eval = |shift: f64| {
        let mut a: Vec<f64> = adv.iter().map(|x| x + shift).collect();
        normalize_advantages(&mut a);
        loss_and_grad(&params, &traj, &a, &targets, &idx, &PpoConfig::default(), 0.03)
            .unwrap()
            .policy_loss
    };
    assert!((eval(0.0) - eval(17.5)).abs() < 1e-9);
}

#[test]
fn kl_coefficient_adaptation() {
    assert_eq!(adapt_kl_coeff(0.03, 0.05, 0.01), 0.06);
    assert_eq!(adapt_kl_coeff(0.03, 0.001, 0.01), 0.015);
    assert_eq!(adapt_kl_coeff(0.03, 0.01, 0.01), 0.03);
}

fn small_cfg() -> PpoConfig {
    PpoConfig {
        train_batch: 100,
        minibatch: 50,
        epochs_per_batch: 2,
        total_iterations: 2,
        hidden: vec![16, 16],
        ..Default::default()
    }
}

#[test]
fn rollout_examples() {
    let env = mfswarm::envs::MfcEnv::new(EnvConfig::new(EnvKind::Aggregation).with_agents(40), ActionMode::PerBin).unwrap();
    let shape = PolicyShape::new(36, 144).with_hidden(vec![8]);
    let params = init_params(&shape, SeedStream::new(1)).unwrap();
    let one = collect_rollout(&env, &params, 50, SeedStream::new(2), Executor::Sequential).unwrap();
    assert_eq!(one.len(), 50);
    assert_eq!(one.segments.len(), 1);
    assert_eq!(one.episode_returns.len(), 1);
    let again = collect_rollout(&env, &params, 50, SeedStream::new(2), Executor::Parallel).unwrap();
    assert_eq!(one, again);
    let bound = env.cfg.reward_bound();
    assert!(one.rewards.iter().all(|r| r.abs() <= bound));
    let partial = collect_rollout(&env, &params, 120, SeedStream::new(2), Executor::Parallel).unwrap();
    assert_eq!(partial.len(), 120);
    assert_eq!(partial.episode_returns.len(), 2);
    assert!(!partial.segments[2].terminal);
}

#[test]
fn marl_counts_one_transition_per_agent() {
    let cfg = EnvConfig::new(EnvKind::Aggregation).with_agents(6);
    let env = mfswarm::envs::MarlEnv::new(cfg).unwrap();
    let shape = PolicyShape::new(38, 2).with_hidden(vec![8]);
    let params = init_params(&shape, SeedStream::new(1)).unwrap();
    let t = collect_rollout(&env, &params, 6 * 50, SeedStream::new(3), Executor::Sequential).unwrap();
    assert_eq!(t.len(), 300);
    assert_eq!(t.env_steps, 50);
    assert_eq!(t.segments.len(), 6);
    // every agent sees the shared reward
    assert_eq!(t.rewards[0..50], t.rewards[250..300]);
}

#[test]
fn training_is_reproducible_and_flat_without_learning_rate() {
    let env = EnvConfig::new(EnvKind::Aggregation).with_agents(30);
    let cfg = small_cfg();
    let (a, ca) = train(&env, &cfg, 11).unwrap();
    let (b, cb) = train(&env, &cfg, 11).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.state, b.state);
    let frozen = PpoConfig {
        learning_rate: 0.0,
        ..small_cfg()
    };
    let (f, _) = train(&env, &frozen, 11).unwrap();
    let (init, _) = TaskTrainer::for_run(RunSpec { env: env.clone(), marl: false }, frozen, 11).unwrap();
    assert_eq!(f.state.params, init.state.params);
}

#[test]
fn marl_with_one_agent_trains() {
    let env = EnvConfig::new(EnvKind::Aggregation);
    let (t, curve) = train_marl(&env, &small_cfg(), 1, 2).unwrap();
    assert_eq!(t.env.spec().n_agents, 1);
    assert_eq!(curve.len(), 2);
    assert_eq!(curve[1].env_steps, 200);
}

#[test]
fn checkpoint_resume_is_bitwise_identical() {
    let env = EnvConfig::new(EnvKind::Aggregation).with_agents(25);
    let spec = RunSpec { env, marl: false };
    let cfg = small_cfg();
    let (mut straight, _) = TaskTrainer::for_run(spec.clone(), cfg.clone(), 5).unwrap();
    straight.iterate().unwrap();
    let ck = straight.checkpoint(spec.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let loaded = TrainCheckpoint::load(&path).unwrap();
    let env = TaskEnv::build(&loaded.meta.run, loaded.meta.ppo.action_mode).unwrap();
    let mut resumed = Trainer::resume(env, &loaded).unwrap();
    let r1 = straight.iterate().unwrap();
    let r2 = resumed.iterate().unwrap();
    assert_eq!(r1, r2);
    let bits = |t: &TaskTrainer| -> Vec<u64> { t.state.params.tensors().concat().iter().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&straight), bits(&resumed));
    assert_eq!(straight.state.optimizer, resumed.state.optimizer);
}

/// One-step bandit: constant observation, reward `-(a - 0.5)^2`.
#[derive(Clone)]
struct Bandit;

impl RlEnv for Bandit {
    fn spec(&self) -> RlSpec {
        RlSpec {
            obs_dim: 1,
            action_dim: 1,
            n_agents: 1,
            horizon: 1,
        }
    }

    fn reset(&mut self, _seed: SeedStream) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }

    fn step(&mut self, actions: &[f64], _seed: SeedStream) -> Result<RlStep> {
        Ok(RlStep {
            obs: vec![1.0],
            reward: -(actions[0] - 0.5).powi(2),
            done: true,
        })
    }
}

#[test]
fn bandit_mean_approaches_optimum() {
    let cfg = PpoConfig {
        learning_rate: 3e-3,
        train_batch: 200,
        minibatch: 100,
        epochs_per_batch: 5,
        hidden: vec![8],
        init_log_std: -1.0,
        executor: Executor::Sequential,
        ..Default::default()
    };
    let mut t = Trainer::new(Bandit, cfg, SquashSpec::new(ActionMode::Global), 1).unwrap();
    let start = t.state.params.act(&[1.0]).unwrap().0[0];
    for _ in 0..200 {
        t.iterate().unwrap();
    }
    let end = t.state.params.act(&[1.0]).unwrap().0[0];
    assert!(start.abs() < 0.1);
    assert!((end - 0.5).abs() < 0.1, "{start} -> {end}");
    let _ = AdamState::for_tensors(&t.state.params.tensors());
}
