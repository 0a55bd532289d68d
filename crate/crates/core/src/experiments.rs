//! Evaluation, convergence, open-loop and collision-sweep experiments.
//! Episodes run through [`Executor`] and results are ordered by episode.

use serde::{Deserialize, Serialize};

use crate::collision::{run_with_collision_avoidance, ApfConfig};
use crate::control::{record_open_loop, replay_open_loop, reset_seed, run_episode, run_from, Controller};
use crate::envs::{reset, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::meanfield::{BinRule, GridSpec, MeanFieldAction, OpenLoopSequence};
use crate::rng::SeedStream;
use crate::sim_core::{SwarmState, Vec2};
use crate::stats::{linear_fit, Summary};

/// Seed of episode `e` for swarm size `n`; shared by paired comparisons.
pub fn episode_seed(base: SeedStream, n: usize, e: usize) -> SeedStream {
    base.child(n as u64).child(e as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub n_agents: usize,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub degenerate: bool,
}

impl EvalRow {
    pub fn new(n_agents: usize, returns: &[f64]) -> Self {
        let s = Summary::of(returns);
        EvalRow {
            n_agents,
            episodes: s.n,
            mean: s.mean,
            std: s.std,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            degenerate: s.degenerate,
        }
    }
}

/// Episode returns of `ctrl` for every swarm size.
pub fn evaluate(
    ctrl: &Controller,
    env: &EnvConfig,
    n_list: &[usize],
    episodes: usize,
    seed: SeedStream,
    exec: Executor,
) -> Result<Vec<(EvalRow, Vec<f64>)>> {
    n_list
        .iter()
        .map(|&n| {
            let cfg = env.clone().with_agents(n);
            cfg.validate()?;
            let returns = exec.try_map(episodes, |e| {
                Ok::<_, Error>(run_episode(ctrl, &cfg, episode_seed(seed, n, e), false)?.total())
            })?;
            Ok((EvalRow::new(n, &returns), returns))
        })
        .collect()
}

/// Fixed Lipschitz test policy: every bin moves toward the histogram
/// centroid with mean `gain * (centroid - bin centre)` clipped to the
/// action square, and a fixed standard deviation.
pub fn centroid_rule(grid: GridSpec, gain: f64, std: f64, radius: f64) -> impl Fn(&Observation, &SwarmState, usize) -> Result<MeanFieldAction> + Sync {
    move |obs, _, _| {
        let centers: Vec<Vec2> = (0..grid.total_bins()).map(|b| grid.bin_center(b)).collect();
        let centroid = obs
            .state_hist
            .mass
            .iter()
            .zip(&centers)
            .fold(Vec2::ZERO, |acc, (&m, &c)| acc + c * m);
        let rules = centers
            .iter()
            .map(|&c| {
                let d = (centroid - c) * gain;
                BinRule {
                    mean: Vec2::new(d.x.clamp(-radius, radius), d.y.clamp(-radius, radius)),
                    std: [std, std],
                }
            })
            .collect();
        Ok(MeanFieldAction { rules })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub n_list: Vec<usize>,
    pub times: Vec<usize>,
    pub episodes: usize,
    pub reference_particles: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            n_list: vec![10, 50, 100, 300, 1000],
            times: vec![10],
            episodes: 200,
            reference_particles: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n_agents: usize,
    pub t: usize,
    pub episodes: usize,
    pub mean_gap: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reference_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub rows: Vec<GapRow>,
    /// Slope and intercept of `ln gap` against `ln N` for every time step.
    pub fits: Vec<(usize, f64, f64)>,
}

/// Rewards at steps `0..=t_max` of one episode with `n` agents.
pub fn rewards_until(ctrl: &Controller, env: &EnvConfig, n: usize, t_max: usize, ep: SeedStream) -> Result<Vec<f64>> {
    let cfg = env.clone().with_agents(n);
    let (state, _, _) = reset(&cfg, reset_seed(ep))?;
    let trace = run_from(ctrl, &cfg, state, t_max + 1, ep, false)?;
    if trace.rewards.len() <= t_max {
        return Err(Error::InvalidConfig(format!("step {t_max} lies beyond the horizon {}", cfg.horizon)));
    }
    Ok(trace.rewards)
}

/// Seed of the reference ensemble run.
pub fn reference_seed(base: SeedStream) -> SeedStream {
    base.named("reference")
}

/// Mean absolute reward gap between finite swarms and a large reference
/// ensemble under the same controller.
pub fn convergence(
    ctrl: &Controller,
    env: &EnvConfig,
    cfg: &ConvergenceConfig,
    seed: SeedStream,
    exec: Executor,
) -> Result<ConvergenceResult> {
    let t_max = *cfg
        .times
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidConfig("no evaluation times".into()))?;
    let reference = rewards_until(ctrl, env, cfg.reference_particles, t_max, reference_seed(seed))?;
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let runs = exec.try_map(cfg.episodes, |e| rewards_until(ctrl, env, n, t_max, episode_seed(seed, n, e)))?;
        for &t in &cfg.times {
            let gaps: Vec<f64> = runs.iter().map(|r| (r[t] - reference[t]).abs()).collect();
            let s = Summary::of(&gaps);
            rows.push(GapRow {
                n_agents: n,
                t,
                episodes: s.n,
                mean_gap: s.mean,
                std: s.std,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
                reference_reward: reference[t],
            });
        }
    }
    let fits = cfg
        .times
        .iter()
        .filter_map(|&t| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.t == t && r.mean_gap > 0.0)
                .map(|r| ((r.n_agents as f64).ln(), r.mean_gap.ln()))
                .unzip();
            linear_fit(&xs, &ys).map(|f| (t, f.slope, f.intercept))
        })
        .collect();
    Ok(ConvergenceResult { rows, fits })
}

/// Successive means decrease unless the difference is within the 95%
/// intervals.
pub fn monotone_within_ci(rows: &[GapRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].ci_low < w[0].ci_high)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopRow {
    pub n_agents: usize,
    pub episode: usize,
    pub closed_loop: f64,
    pub open_loop: f64,
}

/// Records the rule sequence of `ctrl` on a particle ensemble and replays it
/// on finite swarms next to closed-loop runs with identical seeds.
pub fn openloop_experiment(
    ctrl: &Controller,
    env: &EnvConfig,
    n_list: &[usize],
    episodes: usize,
    record_particles: usize,
    seed: SeedStream,
    exec: Executor,
) -> Result<(OpenLoopSequence, Vec<OpenLoopRow>)> {
    if !env.kind.has_deterministic_limit() {
        return Err(Error::StochasticLimit(format!(
            "open-loop control needs a deterministic mean-field limit; {} has random task arrivals",
            env.kind
        )));
    }
    let (seq, _) = record_open_loop(ctrl, &env.clone().with_agents(record_particles), seed.named("record"))?;
    let mut rows = Vec::new();
    for &n in n_list {
        let cfg = env.clone().with_agents(n);
        let pairs = exec.try_map(episodes, |e| {
            let ep = episode_seed(seed, n, e);
            let closed = run_episode(ctrl, &cfg, ep, false)?.total();
            let (state, _, _) = reset(&cfg, reset_seed(ep))?;
            let open = replay_open_loop(&seq, state, &cfg, ep, false)?.total();
            Ok::<_, Error>(OpenLoopRow {
                n_agents: n,
                episode: e,
                closed_loop: closed,
                open_loop: open,
            })
        })?;
        rows.extend(pairs);
    }
    Ok((seq, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_agents: usize,
    pub episode: usize,
    /// `None` for the plain mean-field run without avoidance.
    pub c_rep: Option<f64>,
    pub episode_return: f64,
    pub min_distance: f64,
    pub singularity_count: usize,
}

/// Collision-avoidance runs for every `(N, c_rep)` plus plain runs, all
/// with the same episode seeds.
pub fn sweep_crep(
    ctrl: &Controller,
    env: &EnvConfig,
    apf: &ApfConfig,
    n_list: &[usize],
    crep_list: &[f64],
    episodes: usize,
    seed: SeedStream,
    exec: Executor,
) -> Result<Vec<SweepRow>> {
    apf.validate()?;
    let mut rows = Vec::new();
    for &n in n_list {
        let cfg = env.clone().with_agents(n);
        let plain = exec.try_map(episodes, |e| {
            let ep = episode_seed(seed, n, e);
            let trace = run_episode(ctrl, &cfg, ep, true)?;
            let min_distance = trace
                .states
                .iter()
                .map(|s| crate::sim_core::min_distance(&s.positions).unwrap_or(f64::INFINITY))
                .fold(f64::INFINITY, f64::min);
            Ok::<_, Error>(SweepRow {
                n_agents: n,
                episode: e,
                c_rep: None,
                episode_return: trace.total(),
                min_distance,
                singularity_count: 0,
            })
        })?;
        rows.extend(plain);
        for &c in crep_list {
            let a = apf.clone().with_c_rep(c);
            let runs = exec.try_map(episodes, |e| {
                let r = run_with_collision_avoidance(ctrl, &cfg, &a, episode_seed(seed, n, e))?;
                Ok::<_, Error>(SweepRow {
                    n_agents: n,
                    episode: e,
                    c_rep: Some(c),
                    episode_return: r.episode_return,
                    min_distance: r.min_distance,
                    singularity_count: r.singularity_count,
                })
            })?;
            rows.extend(runs);
        }
    }
    Ok(rows)
}
