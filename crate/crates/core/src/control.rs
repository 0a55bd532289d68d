//! Closed-loop, open-loop and fixed-rule controllers and a shared episode
//! driver. Seeds follow the same schedule as training rollouts, so a policy
//! evaluated with exploration reproduces its training episodes.

use ndarray::ArrayView2;

use crate::envs::{observe, per_agent_view, reset, step_with_actions, EnvConfig, Observation, TaskState};
use crate::error::{Error, Result};
use crate::meanfield::{empirical_histogram, sample_actions, Histogram, MeanFieldAction, OpenLoopSequence};
use crate::policy_nn::{mode_action, sample_action, ActionMode, PolicyParams, SquashSpec};
use crate::rng::SeedStream;
use crate::sim_core::{ActionBatch, SwarmState};

/// Mean-field rule computed from the observation, state and time step.
pub type RuleFn<'a> = dyn Fn(&Observation, &SwarmState, usize) -> Result<MeanFieldAction> + Sync + 'a;

#[derive(Clone, Copy)]
pub enum Controller<'a> {
    /// Trained network; `explore` samples actions, otherwise the mean is used.
    Policy {
        params: &'a PolicyParams,
        squash: SquashSpec,
        explore: bool,
    },
    OpenLoop(&'a OpenLoopSequence),
    Rule(&'a RuleFn<'a>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    MeanField(MeanFieldAction),
    /// Disc-clipped movement for every agent.
    PerAgent(ActionBatch),
}

/// Seed of the reset of episode `ep`.
pub fn reset_seed(ep: SeedStream) -> SeedStream {
    ep.named("reset")
}

/// Environment seed of step `t` of episode `ep`.
pub fn env_seed(ep: SeedStream, t: usize) -> SeedStream {
    ep.child(t as u64).named("env")
}

/// Action-sampling seed of step `t` of episode `ep`.
pub fn policy_seed(ep: SeedStream, t: usize) -> SeedStream {
    ep.child(t as u64).named("policy")
}

impl Controller<'_> {
    pub fn decide(
        &self,
        cfg: &EnvConfig,
        obs: &Observation,
        state: &SwarmState,
        t: usize,
        seed: SeedStream,
    ) -> Result<Decision> {
        match *self {
            Controller::OpenLoop(seq) => seq
                .actions
                .get(t)
                .cloned()
                .map(Decision::MeanField)
                .ok_or(Error::SequenceTooShort {
                    len: seq.actions.len(),
                    horizon: t + 1,
                }),
            Controller::Rule(f) => Ok(Decision::MeanField(f(obs, state, t)?)),
            Controller::Policy {
                params,
                squash,
                explore,
            } => {
                let pick = |mean: &[f64], log_std: &[f64], s: SeedStream| {
                    if explore {
                        sample_action(mean, log_std, s).clipped
                    } else {
                        mode_action(mean)
                    }
                };
                if squash.mode == ActionMode::Agent {
                    let n = state.len();
                    let mut rows = Vec::with_capacity(n * params.obs_dim());
                    for i in 0..n {
                        rows.extend(per_agent_view(obs, state, i, cfg.space.box_half_width)?);
                    }
                    let x = ArrayView2::from_shape((n, params.obs_dim()), &rows)
                        .map_err(|e| Error::Shape(e.to_string()))?;
                    let means = params.policy.forward(x)?;
                    let log_std = params.log_std.mapv(crate::policy_nn::clamp_log_std).to_vec();
                    let moves = means
                        .rows()
                        .into_iter()
                        .enumerate()
                        .map(|(i, m)| {
                            let a = pick(m.as_slice().unwrap(), &log_std, seed.child(i as u64));
                            squash.to_movement(&a, cfg.space.action_radius)
                        })
                        .collect();
                    Ok(Decision::PerAgent(ActionBatch::new(moves)))
                } else {
                    let (mean, log_std) = params.act(&obs.to_vec())?;
                    let a = pick(&mean, &log_std, seed.child(0));
                    Ok(Decision::MeanField(squash.to_mfc(&a, cfg.grid.total_bins())?))
                }
            }
        }
    }
}

/// Per-agent moves for a decision.
pub fn realize(decision: &Decision, state: &SwarmState, cfg: &EnvConfig, env_seed: SeedStream) -> Result<ActionBatch> {
    match decision {
        Decision::MeanField(h) => sample_actions(h, state, &cfg.grid, cfg.space.action_radius, env_seed.named("actions")),
        Decision::PerAgent(a) => Ok(a.clone()),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rewards: Vec<f64>,
    /// States before each step followed by the final state (when recorded).
    pub states: Vec<SwarmState>,
    /// Applied mean-field rules (when recorded and the controller uses them).
    pub rules: Vec<MeanFieldAction>,
}

impl EpisodeTrace {
    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Runs `steps` steps (at most the horizon) of the finite swarm from an
/// explicit initial state.
pub fn run_from(
    ctrl: &Controller,
    cfg: &EnvConfig,
    mut state: SwarmState,
    steps: usize,
    ep: SeedStream,
    record: bool,
) -> Result<EpisodeTrace> {
    let mut tasks = TaskState::default();
    let mut obs = observe(cfg, &state, &tasks)?;
    let mut trace = EpisodeTrace::default();
    for t in 0..steps.min(cfg.horizon) {
        let decision = ctrl.decide(cfg, &obs, &state, t, policy_seed(ep, t))?;
        let s = env_seed(ep, t);
        let acts = realize(&decision, &state, cfg, s)?;
        let r = step_with_actions(&state, &tasks, acts, cfg, s)?;
        if record {
            trace.states.push(state);
            if let Decision::MeanField(h) = decision {
                trace.rules.push(h);
            }
        }
        trace.rewards.push(r.reward);
        state = r.state;
        tasks = r.tasks;
        obs = r.obs;
    }
    if record {
        trace.states.push(state);
    }
    Ok(trace)
}

/// One full episode from the environment's initial distribution.
pub fn run_episode(ctrl: &Controller, cfg: &EnvConfig, ep: SeedStream, record: bool) -> Result<EpisodeTrace> {
    let (state, _, _) = reset(cfg, reset_seed(ep))?;
    run_from(ctrl, cfg, state, cfg.horizon, ep, record)
}

/// Records the mean-field rules a closed-loop controller applies on one
/// particle-ensemble rollout of `cfg.n_agents` particles.
pub fn record_open_loop(ctrl: &Controller, cfg: &EnvConfig, ep: SeedStream) -> Result<(OpenLoopSequence, EpisodeTrace)> {
    let trace = run_episode(ctrl, cfg, ep, true)?;
    if trace.rules.len() != cfg.horizon {
        return Err(Error::InvalidConfig("open-loop recording needs a mean-field controller".into()));
    }
    let initial_histogram: Histogram = empirical_histogram(&trace.states[0], &cfg.grid)?;
    let seq = OpenLoopSequence {
        grid: cfg.grid,
        actions: trace.rules.clone(),
        initial_histogram,
    };
    Ok((seq, trace))
}

/// Applies a pre-recorded rule sequence to a finite swarm without any
/// population feedback.
pub fn replay_open_loop(
    seq: &OpenLoopSequence,
    state: SwarmState,
    cfg: &EnvConfig,
    ep: SeedStream,
    record: bool,
) -> Result<EpisodeTrace> {
    if seq.horizon() < cfg.horizon {
        return Err(Error::SequenceTooShort {
            len: seq.horizon(),
            horizon: cfg.horizon,
        });
    }
    run_from(&Controller::OpenLoop(seq), cfg, state, cfg.horizon, ep, record)
}
