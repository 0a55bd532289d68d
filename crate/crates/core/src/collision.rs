//! Artificial-potential-field collision avoidance between decision epochs.
//!
//! Each epoch the mean-field controller assigns every agent a target; agents
//! then follow `1.5 (target - x)` plus pairwise repulsion for `inner_steps`
//! explicit Euler substeps. All velocities of a substep use the positions of
//! the previous substep.

use serde::{Deserialize, Serialize};

use crate::control::{env_seed, policy_seed, realize, reset_seed, Controller};
use crate::envs::{observe, step_reward, task_arrivals, EnvConfig, TaskState};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::sim_core::{step_swarm, SpaceConfig, SwarmState, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApfConfig {
    pub attract_gain: f64,
    pub rep_gain_base: f64,
    pub c_rep: f64,
    pub interaction_radius: f64,
    pub inner_dt: f64,
    pub inner_steps: usize,
    pub speed_cap: Option<f64>,
    /// Pair distances below this are raised to it and counted.
    pub distance_floor: f64,
}

impl Default for ApfConfig {
    fn default() -> Self {
        ApfConfig {
            attract_gain: 1.5,
            rep_gain_base: 1.5,
            c_rep: 0.1,
            interaction_radius: 1.0,
            inner_dt: 0.02,
            inner_steps: 100,
            speed_cap: None,
            distance_floor: 1e-6,
        }
    }
}

impl ApfConfig {
    pub fn with_c_rep(mut self, c_rep: f64) -> Self {
        self.c_rep = c_rep;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let gains_ok = self.attract_gain >= 0.0 && self.rep_gain_base >= 0.0 && self.c_rep >= 0.0;
        if !gains_ok || !(self.inner_dt > 0.0) || self.inner_steps == 0 || !(self.interaction_radius > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid APF settings {self:?}")));
        }
        if self.speed_cap.is_some_and(|c| !(c > 0.0)) || !(self.distance_floor > 0.0) {
            return Err(Error::InvalidConfig("speed cap and distance floor must be positive".into()));
        }
        Ok(())
    }
}

/// Velocity pushing an agent away from a neighbour at offset `d = x_i - x_j`:
/// `gain * c_rep * (1/|d| - 1/R) * d / |d|^3` inside radius `R`, else zero.
/// The flag reports that the distance floor was applied.
pub fn repulsion(d: Vec2, cfg: &ApfConfig) -> (Vec2, bool) {
    let r = d.norm();
    if r > cfg.interaction_radius || cfg.c_rep == 0.0 {
        return (Vec2::ZERO, false);
    }
    let floored = r < cfg.distance_floor;
    let (r, dir) = if floored {
        // coincident or nearly so: keep the direction when defined
        let dir = if r > 0.0 { d * (1.0 / r) } else { Vec2::new(1.0, 0.0) };
        (cfg.distance_floor, dir)
    } else {
        (r, d * (1.0 / r))
    };
    let mag = cfg.rep_gain_base * cfg.c_rep * (1.0 / r - 1.0 / cfg.interaction_radius) / (r * r);
    (dir * mag, floored)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApfVelocity {
    pub velocity: Vec2,
    pub singularities: usize,
}

fn cap(v: Vec2, cfg: &ApfConfig) -> Vec2 {
    match cfg.speed_cap {
        Some(c) if v.norm() > c => v * (c / v.norm()),
        _ => v,
    }
}

/// Attraction to the agent's own target plus repulsion from all neighbours.
pub fn apf_velocity(i: usize, positions: &[Vec2], targets: &[Vec2], cfg: &ApfConfig) -> Result<ApfVelocity> {
    if positions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: positions.len(),
            got: targets.len(),
        });
    }
    let x = *positions.get(i).ok_or(Error::AgentIndex {
        index: i,
        n: positions.len(),
    })?;
    let mut v = (targets[i] - x) * cfg.attract_gain;
    let mut singularities = 0;
    for (j, &y) in positions.iter().enumerate() {
        if j != i {
            let (f, hit) = repulsion(x - y, cfg);
            v = v + f;
            singularities += hit as usize;
        }
    }
    Ok(ApfVelocity {
        velocity: cap(v, cfg),
        singularities,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochResult {
    pub positions: Vec<Vec2>,
    /// Minimum pair distance over the start, every substep and the end.
    pub min_distance: f64,
    pub max_deviation: f64,
    /// Pair evaluations that hit the distance floor.
    pub singularities: usize,
}

/// Integrates one decision epoch. Pairwise terms are evaluated once per pair
/// and applied to both agents.
pub fn integrate_epoch(positions: &[Vec2], targets: &[Vec2], cfg: &ApfConfig, space: &SpaceConfig) -> Result<EpochResult> {
    cfg.validate()?;
    if positions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: positions.len(),
            got: targets.len(),
        });
    }
    let n = positions.len();
    let mut x = positions.to_vec();
    let mut v = vec![Vec2::ZERO; n];
    let mut min_sq = f64::INFINITY;
    let mut singularities = 0;
    let radius_sq = cfg.interaction_radius * cfg.interaction_radius;
    let repel = cfg.c_rep > 0.0;
    for _ in 0..cfg.inner_steps {
        for i in 0..n {
            v[i] = (targets[i] - x[i]) * cfg.attract_gain;
        }
        for i in 0..n {
            let xi = x[i];
            for j in i + 1..n {
                let d = xi - x[j];
                let dsq = d.norm_sq();
                min_sq = min_sq.min(dsq);
                if repel && dsq <= radius_sq {
                    let (f, hit) = repulsion(d, cfg);
                    v[i] = v[i] + f;
                    v[j] = v[j] - f;
                    singularities += 2 * hit as usize;
                }
            }
        }
        for i in 0..n {
            x[i] = space.clip_box(x[i] + cap(v[i], cfg) * cfg.inner_dt);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            min_sq = min_sq.min((x[i] - x[j]).norm_sq());
        }
    }
    let max_deviation = x.iter().zip(targets).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max);
    Ok(EpochResult {
        positions: x,
        min_distance: min_sq.sqrt(),
        max_deviation,
        singularities,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionEpisode {
    pub rewards: Vec<f64>,
    pub episode_return: f64,
    /// Minimum pair distance over every substep of the episode.
    pub min_distance: f64,
    pub singularity_count: usize,
    pub max_deviation: f64,
}

/// One episode in which every decision epoch is executed by APF tracking
/// of the targets the plain dynamics would produce. Rewards are evaluated
/// on the realized positions at the start of each epoch, with the sampled
/// actions, exactly as in the plain environment step.
pub fn run_with_collision_avoidance(
    ctrl: &Controller,
    cfg: &EnvConfig,
    apf: &ApfConfig,
    ep: SeedStream,
) -> Result<CollisionEpisode> {
    apf.validate()?;
    let (mut state, _, _) = crate::envs::reset(cfg, reset_seed(ep))?;
    let mut tasks = TaskState::default();
    let mut obs = observe(cfg, &state, &tasks)?;
    let mut rewards = Vec::with_capacity(cfg.horizon);
    let mut min_distance = f64::INFINITY;
    let (mut singularity_count, mut max_deviation) = (0, 0.0f64);
    for t in 0..cfg.horizon {
        let decision = ctrl.decide(cfg, &obs, &state, t, policy_seed(ep, t))?;
        let s = env_seed(ep, t);
        let acts = realize(&decision, &state, cfg, s)?;
        rewards.push(step_reward(cfg, &state, &acts, &mut tasks, s)?);
        let targets = step_swarm(&state, &acts, &cfg.space, s.named("noise"))?;
        let epoch = integrate_epoch(&state.positions, &targets.positions, apf, &cfg.space)?;
        min_distance = min_distance.min(epoch.min_distance);
        singularity_count += epoch.singularities;
        max_deviation = max_deviation.max(epoch.max_deviation);
        state = SwarmState {
            positions: epoch.positions,
            time_index: state.time_index + 1,
        };
        if cfg.kind.has_tasks() {
            tasks = task_arrivals(&tasks, cfg, s.named("arrivals"));
        }
        obs = observe(cfg, &state, &tasks)?;
    }
    Ok(CollisionEpisode {
        episode_return: rewards.iter().sum(),
        rewards,
        min_distance,
        singularity_count,
        max_deviation,
    })
}
