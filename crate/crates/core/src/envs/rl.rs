//! Flat-vector adapters used by the trainer.

use super::{env_step, observe, per_agent_view, reset, step_with_actions, EnvConfig, TaskState};
use crate::error::{Error, Result};
use crate::meanfield::MeanFieldAction;
use crate::policy_nn::{ActionMode, SquashSpec};
use crate::rng::SeedStream;
use crate::sim_core::{ActionBatch, SwarmState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RlSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Number of policy evaluations per environment step.
    pub n_agents: usize,
    pub horizon: usize,
}

/// Observations are `n_agents` rows of `obs_dim` values, concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct RlStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait RlEnv: Send {
    fn spec(&self) -> RlSpec;
    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>>;
    /// `actions` holds `n_agents` rows of clipped `[-1, 1]` values.
    fn step(&mut self, actions: &[f64], seed: SeedStream) -> Result<RlStep>;
}

/// The mean-field MDP: one decision rule per step for the whole swarm.
#[derive(Clone, Debug)]
pub struct MfcEnv {
    pub cfg: EnvConfig,
    pub squash: SquashSpec,
    state: SwarmState,
    tasks: TaskState,
    last_action: Option<MeanFieldAction>,
}

impl MfcEnv {
    pub fn new(cfg: EnvConfig, mode: ActionMode) -> Result<Self> {
        cfg.validate()?;
        if mode == ActionMode::Agent {
            return Err(Error::InvalidConfig("mean-field env needs a decision-rule action mode".into()));
        }
        Ok(MfcEnv {
            cfg,
            squash: SquashSpec::new(mode),
            state: SwarmState::new(Vec::new()),
            tasks: TaskState::default(),
            last_action: None,
        })
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    pub fn tasks(&self) -> &TaskState {
        &self.tasks
    }

    /// Decision rule applied by the most recent step.
    pub fn last_action(&self) -> Option<&MeanFieldAction> {
        self.last_action.as_ref()
    }
}

impl RlEnv for MfcEnv {
    fn spec(&self) -> RlSpec {
        RlSpec {
            obs_dim: self.cfg.obs_dim(),
            action_dim: self.squash.mode.action_dim(self.cfg.grid.total_bins()),
            n_agents: 1,
            horizon: self.cfg.horizon,
        }
    }

    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>> {
        let (s, t, o) = reset(&self.cfg, seed)?;
        self.state = s;
        self.tasks = t;
        self.last_action = None;
        Ok(o.to_vec())
    }

    fn step(&mut self, actions: &[f64], seed: SeedStream) -> Result<RlStep> {
        let h = self.squash.to_mfc(actions, self.cfg.grid.total_bins())?;
        let r = env_step(&self.state, &self.tasks, &h, &self.cfg, seed)?;
        self.state = r.state;
        self.tasks = r.tasks;
        self.last_action = Some(h);
        Ok(RlStep {
            obs: r.obs.to_vec(),
            reward: r.reward,
            done: r.done,
        })
    }
}

/// Parameter-shared multi-agent view: every agent acts on the shared
/// observation plus its own position and receives the global reward.
#[derive(Clone, Debug)]
pub struct MarlEnv {
    pub cfg: EnvConfig,
    pub squash: SquashSpec,
    state: SwarmState,
    tasks: TaskState,
}

impl MarlEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MarlEnv {
            cfg,
            squash: SquashSpec::new(ActionMode::Agent),
            state: SwarmState::new(Vec::new()),
            tasks: TaskState::default(),
        })
    }

    pub fn state(&self) -> &SwarmState {
        &self.state
    }

    fn views(&self) -> Result<Vec<f64>> {
        let obs = observe(&self.cfg, &self.state, &self.tasks)?;
        let mut out = Vec::with_capacity(self.state.len() * (self.cfg.obs_dim() + 2));
        for i in 0..self.state.len() {
            out.extend(per_agent_view(&obs, &self.state, i, self.cfg.space.box_half_width)?);
        }
        Ok(out)
    }
}

impl RlEnv for MarlEnv {
    fn spec(&self) -> RlSpec {
        RlSpec {
            obs_dim: self.cfg.obs_dim() + 2,
            action_dim: 2,
            n_agents: self.cfg.n_agents,
            horizon: self.cfg.horizon,
        }
    }

    fn reset(&mut self, seed: SeedStream) -> Result<Vec<f64>> {
        let (s, t, _) = reset(&self.cfg, seed)?;
        self.state = s;
        self.tasks = t;
        self.views()
    }

    fn step(&mut self, actions: &[f64], seed: SeedStream) -> Result<RlStep> {
        let n = self.state.len();
        if actions.len() != 2 * n {
            return Err(Error::LengthMismatch {
                expected: 2 * n,
                got: actions.len(),
            });
        }
        let moves = actions
            .chunks_exact(2)
            .map(|a| self.squash.to_movement(a, self.cfg.space.action_radius))
            .collect();
        let r = step_with_actions(&self.state, &self.tasks, ActionBatch::new(moves), &self.cfg, seed)?;
        self.state = r.state;
        self.tasks = r.tasks;
        Ok(RlStep {
            obs: self.views()?,
            reward: r.reward,
            done: r.done,
        })
    }
}
