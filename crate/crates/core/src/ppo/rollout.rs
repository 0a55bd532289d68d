use ndarray::ArrayView2;

use crate::envs::RlEnv;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::policy_nn::{sample_action, PolicyParams};
use crate::rng::SeedStream;

/// A run of consecutive transitions of one agent within one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Value estimate after the last transition (ignored when terminal).
    pub bootstrap: f64,
    pub terminal: bool,
}

/// Flat transition storage; row `k` of every per-step array belongs together.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    /// Unclipped Gaussian samples.
    pub actions: Vec<f64>,
    pub means: Vec<f64>,
    pub log_std: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub segments: Vec<Segment>,
    /// Undiscounted returns of the episodes that reached the horizon.
    pub episode_returns: Vec<f64>,
    pub env_steps: usize,
}

impl Trajectory {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Trajectory {
            obs_dim,
            action_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.obs.len() == n * self.obs_dim
            && self.actions.len() == n * self.action_dim
            && self.means.len() == n * self.action_dim
            && self.log_probs.len() == n
            && self.values.len() == n
            && self.log_std.len() == self.action_dim
            && self.segments.iter().map(|s| s.len).sum::<usize>() == n;
        if !ok {
            return Err(Error::Shape("trajectory arrays are misaligned".into()));
        }
        if self.log_probs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Shape("non-finite log-probability in trajectory".into()));
        }
        Ok(())
    }

    pub fn append(&mut self, mut other: Trajectory) {
        let offset = self.len();
        self.obs.append(&mut other.obs);
        self.actions.append(&mut other.actions);
        self.means.append(&mut other.means);
        self.log_probs.append(&mut other.log_probs);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.segments.extend(other.segments.iter().map(|s| Segment {
            start: s.start + offset,
            ..*s
        }));
        self.episode_returns.append(&mut other.episode_returns);
        self.env_steps += other.env_steps;
        if self.log_std.is_empty() {
            self.log_std = other.log_std;
        }
    }
}

/// Plays one episode of at most `steps` environment steps.
pub fn run_episode<E: RlEnv + ?Sized>(
    env: &mut E,
    params: &PolicyParams,
    steps: usize,
    seed: SeedStream,
) -> Result<Trajectory> {
    let spec = env.spec();
    let (d, a, n) = (spec.obs_dim, spec.action_dim, spec.n_agents);
    if params.obs_dim() != d || params.action_dim() != a {
        return Err(Error::Shape(format!(
            "policy is {}->{}, environment needs {d}->{a}",
            params.obs_dim(),
            params.action_dim()
        )));
    }
    let steps = steps.min(spec.horizon);
    let log_std = params.log_std.mapv(crate::policy_nn::clamp_log_std).to_vec();
    // time-major buffers, reordered agent-major at the end
    let mut obs_t = Vec::with_capacity(steps * n * d);
    let mut act_t = Vec::with_capacity(steps * n * a);
    let mut mean_t = Vec::with_capacity(steps * n * a);
    let mut logp_t = Vec::with_capacity(steps * n);
    let mut rewards = Vec::with_capacity(steps);
    let mut obs = env.reset(seed.named("reset"))?;
    let mut done = false;
    for t in 0..steps {
        let step_seed = seed.child(t as u64);
        let view = ArrayView2::from_shape((n, d), &obs).map_err(|e| Error::Shape(e.to_string()))?;
        let means = params.policy.forward(view)?;
        let mut clipped = Vec::with_capacity(n * a);
        for (i, m) in means.rows().into_iter().enumerate() {
            let m = m.as_slice().unwrap();
            let s = sample_action(m, &log_std, step_seed.named("policy").child(i as u64));
            clipped.extend_from_slice(&s.clipped);
            act_t.extend_from_slice(&s.sample);
            mean_t.extend_from_slice(m);
            logp_t.push(s.log_prob);
        }
        obs_t.extend_from_slice(&obs);
        let r = env.step(&clipped, step_seed.named("env"))?;
        rewards.push(r.reward);
        obs = r.obs;
        done = r.done;
    }
    let len = rewards.len();
    let all_obs = ArrayView2::from_shape((len * n, d), &obs_t).map_err(|e| Error::Shape(e.to_string()))?;
    let values_t = params.values(all_obs)?;
    let last = ArrayView2::from_shape((n, d), &obs).map_err(|e| Error::Shape(e.to_string()))?;
    let bootstrap = params.values(last)?;

    let mut traj = Trajectory::new(d, a);
    traj.log_std = log_std;
    for i in 0..n {
        let start = traj.len();
        for t in 0..len {
            let k = t * n + i;
            traj.obs.extend_from_slice(&obs_t[k * d..(k + 1) * d]);
            traj.actions.extend_from_slice(&act_t[k * a..(k + 1) * a]);
            traj.means.extend_from_slice(&mean_t[k * a..(k + 1) * a]);
            traj.log_probs.push(logp_t[k]);
            traj.rewards.push(rewards[t]);
            traj.values.push(values_t[k]);
        }
        traj.segments.push(Segment {
            start,
            len,
            bootstrap: bootstrap[i],
            terminal: false,
        });
    }
    if done {
        traj.episode_returns.push(rewards.iter().sum());
    }
    traj.env_steps = len;
    Ok(traj)
}

/// Collects at least `steps` transitions from back-to-back episodes.
///
/// Each environment step yields one transition per agent. Episodes run in
/// parallel on clones of `env`; the last one is cut short when the budget
/// ends mid-episode and bootstraps from its value estimate.
pub fn collect_rollout<E: RlEnv + Clone + Sync>(
    env: &E,
    params: &PolicyParams,
    steps: usize,
    seed: SeedStream,
    exec: Executor,
) -> Result<Trajectory> {
    let spec = env.spec();
    if steps == 0 || spec.horizon == 0 || spec.n_agents == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let env_steps = steps.div_ceil(spec.n_agents);
    let episodes = env_steps.div_ceil(spec.horizon);
    let parts = exec.try_map(episodes, |e| {
        let mut local = env.clone();
        let budget = (env_steps - e * spec.horizon).min(spec.horizon);
        run_episode(&mut local, params, budget, seed.child(e as u64))
    })?;
    let mut traj = Trajectory::new(spec.obs_dim, spec.action_dim);
    for p in parts {
        traj.append(p);
    }
    Ok(traj)
}
