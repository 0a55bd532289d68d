//! Proximal policy optimization for the mean-field MDP and the
//! parameter-shared multi-agent baseline.

mod gae;
mod rollout;
mod update;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, MarlEnv, MfcEnv, RlEnv, RlSpec, RlStep};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::policy_nn::{
    init_params, ActionMode, AdamState, Checkpoint, PolicyParams, PolicyShape, RngState, SquashSpec,
};
use crate::rng::SeedStream;
use crate::stats::{mean, std_dev};

pub use gae::{compute_gae, normalize_advantages, Gae};
pub use rollout::{collect_rollout, run_episode, Segment, Trajectory};
pub use update::{adapt_kl_coeff, batch_kl, clip_gradients, loss_and_grad, ppo_update, LossGrad, UpdateStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Initial KL penalty coefficient.
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub clip: f64,
    pub learning_rate: f64,
    /// Transitions per iteration (one per agent and environment step).
    pub train_batch: usize,
    pub minibatch: usize,
    pub epochs_per_batch: usize,
    pub total_iterations: usize,
    pub value_loss_coeff: f64,
    /// Per-network gradient norm bound; zero disables clipping.
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub action_mode: ActionMode,
    /// Rollout scheduling; results do not depend on it.
    #[serde(skip)]
    pub executor: Executor,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 1.0,
            kl_coeff: 0.03,
            kl_target: 0.01,
            clip: 0.2,
            learning_rate: 5e-5,
            train_batch: 4000,
            minibatch: 1000,
            epochs_per_batch: 5,
            total_iterations: 100,
            value_loss_coeff: 1.0,
            max_grad_norm: 0.5,
            hidden: vec![256, 256],
            init_log_std: 0.0,
            action_mode: ActionMode::PerBin,
            executor: Executor::Parallel,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.kl_coeff > 0.0 && self.kl_target > 0.0 && self.clip > 0.0) {
            return bad("kl_coeff, kl_target and clip must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.train_batch == 0 || self.minibatch == 0 || self.epochs_per_batch == 0 {
            return bad("batch sizes and epochs must be positive");
        }
        if self.minibatch > self.train_batch {
            return bad("minibatch exceeds train_batch");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be non-negative");
        }
        Ok(())
    }
}

/// Welford accumulator over per-step rewards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub optimizer: AdamState,
    pub iteration: u64,
    pub env_steps: u64,
    pub reward_stats: RunningStats,
    pub kl_coeff: f64,
}

/// One learning-curve row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_kl: f64,
    pub kl_coeff: f64,
}

/// Trainer bookkeeping stored next to the weights in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta<X> {
    pub iteration: u64,
    pub env_steps: u64,
    pub kl_coeff: f64,
    pub reward_stats: RunningStats,
    pub ppo: PpoConfig,
    pub run: X,
}

/// Environment description for checkpoints of the built-in tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub marl: bool,
}

pub type TrainCheckpoint = Checkpoint<TrainMeta<RunSpec>>;

pub struct Trainer<E> {
    pub env: E,
    pub cfg: PpoConfig,
    pub shape: PolicyShape,
    pub squash: SquashSpec,
    pub state: TrainState,
    base_seed: u64,
}

impl<E: RlEnv + Clone + Sync> Trainer<E> {
    pub fn new(env: E, cfg: PpoConfig, squash: SquashSpec, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let RlSpec {
            obs_dim, action_dim, ..
        } = env.spec();
        let mut shape = PolicyShape::new(obs_dim, action_dim).with_hidden(cfg.hidden.clone());
        shape.init_log_std = cfg.init_log_std;
        let params = init_params(&shape, SeedStream::new(seed).named("init"))?;
        let optimizer = AdamState::for_tensors(&params.tensors());
        Ok(Trainer {
            env,
            state: TrainState {
                params,
                optimizer,
                iteration: 0,
                env_steps: 0,
                reward_stats: RunningStats::default(),
                kl_coeff: cfg.kl_coeff,
            },
            cfg,
            shape,
            squash,
            base_seed: seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.base_seed
    }

    /// One rollout and update. Seeds depend only on the base seed and the
    /// iteration counter.
    pub fn iterate(&mut self) -> Result<CurveRow> {
        let base = SeedStream::new(self.base_seed);
        let k = self.state.iteration;
        let traj = collect_rollout(
            &self.env,
            &self.state.params,
            self.cfg.train_batch,
            base.named("rollout").child(k),
            self.cfg.executor,
        )?;
        let used_coeff = self.state.kl_coeff;
        let stats = ppo_update(
            &mut self.state.params,
            &mut self.state.optimizer,
            &traj,
            &self.cfg,
            used_coeff,
            base.named("update").child(k),
        )?;
        // agents of one episode share the reward; count each environment step once
        let n_agents = self.env.spec().n_agents.max(1);
        for seg in traj.segments.iter().step_by(n_agents) {
            for r in &traj.rewards[seg.start..seg.start + seg.len] {
                self.state.reward_stats.push(*r);
            }
        }
        self.state.kl_coeff = stats.kl_coeff;
        self.state.iteration += 1;
        self.state.env_steps += traj.env_steps as u64;
        Ok(CurveRow {
            iteration: self.state.iteration,
            env_steps: self.state.env_steps,
            mean_return: mean(&traj.episode_returns),
            std_return: std_dev(&traj.episode_returns),
            mean_kl: stats.mean_kl,
            kl_coeff: used_coeff,
        })
    }

    pub fn checkpoint<X>(&self, run: X) -> Checkpoint<TrainMeta<X>>
    where
        X: Serialize + serde::de::DeserializeOwned,
    {
        Checkpoint::new(
            self.shape.clone(),
            self.squash,
            self.state.params.clone(),
            self.state.optimizer.clone(),
            RngState {
                base_seed: self.base_seed,
                iteration: self.state.iteration,
            },
            TrainMeta {
                iteration: self.state.iteration,
                env_steps: self.state.env_steps,
                kl_coeff: self.state.kl_coeff,
                reward_stats: self.state.reward_stats,
                ppo: self.cfg.clone(),
                run,
            },
        )
    }

    /// Continues training exactly where `ck` stopped.
    pub fn resume<X>(env: E, ck: &Checkpoint<TrainMeta<X>>) -> Result<Self>
    where
        X: Serialize + serde::de::DeserializeOwned,
    {
        ck.validate()?;
        let spec = env.spec();
        if spec.obs_dim != ck.shape.obs_dim || spec.action_dim != ck.shape.action_dim {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint policy is {}->{}, environment needs {}->{}",
                ck.shape.obs_dim, ck.shape.action_dim, spec.obs_dim, spec.action_dim
            )));
        }
        ck.meta.ppo.validate()?;
        Ok(Trainer {
            env,
            cfg: ck.meta.ppo.clone(),
            shape: ck.shape.clone(),
            squash: ck.squash,
            state: TrainState {
                params: ck.params.clone(),
                optimizer: ck.optimizer.clone(),
                iteration: ck.meta.iteration,
                env_steps: ck.meta.env_steps,
                reward_stats: ck.meta.reward_stats,
                kl_coeff: ck.meta.kl_coeff,
            },
            base_seed: ck.rng.base_seed,
        })
    }
}

/// Either built-in environment behind one type.
#[derive(Clone, Debug)]
pub enum TaskEnv {
    Mfc(MfcEnv),
    Marl(MarlEnv),
}

impl TaskEnv {
    pub fn build(spec: &RunSpec, mode: ActionMode) -> Result<Self> {
        if spec.marl {
            Ok(TaskEnv::Marl(MarlEnv::new(spec.env.clone())?))
        } else {
            Ok(TaskEnv::Mfc(MfcEnv::new(spec.env.clone(), mode)?))
        }
    }

    pub fn squash(&self) -> SquashSpec {
        match self {
            TaskEnv::Mfc(e) => e.squash,
            TaskEnv::Marl(e) => e.squash,
        }
    }
}

impl RlEnv for TaskEnv {
    fn spec(&self) -> RlSpec {
        match self {
            TaskEnv::Mfc(e) => e.spec(),
            TaskEnv::Marl(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>> {
        match self {
            TaskEnv::Mfc(e) => e.reset(seed),
            TaskEnv::Marl(e) => e.reset(seed),
        }
    }

    fn step(&mut self, actions: &[f64], seed: SeedStream) -> Result<RlStep> {
        match self {
            TaskEnv::Mfc(e) => e.step(actions, seed),
            TaskEnv::Marl(e) => e.step(actions, seed),
        }
    }
}

pub type TaskTrainer = Trainer<TaskEnv>;

impl TaskTrainer {
    pub fn for_run(spec: RunSpec, cfg: PpoConfig, seed: u64) -> Result<(Self, RunSpec)> {
        let env = TaskEnv::build(&spec, cfg.action_mode)?;
        let squash = env.squash();
        Ok((Trainer::new(env, cfg, squash, seed)?, spec))
    }
}

/// Trains for `cfg.total_iterations` iterations, calling `on_iteration`
/// after each one.
pub fn train_with<F>(spec: RunSpec, cfg: &PpoConfig, seed: u64, mut on_iteration: F) -> Result<(TaskTrainer, Vec<CurveRow>)>
where
    F: FnMut(&TaskTrainer, &RunSpec, &CurveRow) -> Result<()>,
{
    let (mut trainer, spec) = TaskTrainer::for_run(spec, cfg.clone(), seed)?;
    let mut curve = Vec::with_capacity(cfg.total_iterations);
    for _ in 0..cfg.total_iterations {
        let row = trainer.iterate()?;
        on_iteration(&trainer, &spec, &row)?;
        curve.push(row);
    }
    Ok((trainer, curve))
}

pub fn train(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> Result<(TaskTrainer, Vec<CurveRow>)> {
    let spec = RunSpec {
        env: env.clone(),
        marl: false,
    };
    train_with(spec, cfg, seed, |_, _, _| Ok(()))
}

pub fn train_marl(env: &EnvConfig, cfg: &PpoConfig, n_agents: usize, seed: u64) -> Result<(TaskTrainer, Vec<CurveRow>)> {
    let spec = RunSpec {
        env: env.clone().with_agents(n_agents),
        marl: true,
    };
    train_with(spec, cfg, seed, |_, _, _| Ok(()))
}
