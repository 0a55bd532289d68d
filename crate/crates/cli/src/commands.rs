//! Subcommand implementations. Every command writes its outputs and a
//! manifest into the configured output directory.

use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use mfswarm::collision::ApfConfig;
use mfswarm::control::Controller;
use mfswarm::envs::{EnvConfig, RlEnv};
use mfswarm::experiments::{
    centroid_rule, convergence, evaluate, monotone_within_ci, openloop_experiment, sweep_crep, ConvergenceConfig,
    EvalRow, SweepRow,
};
use mfswarm::ppo::{RunSpec, TaskEnv, TaskTrainer, TrainCheckpoint, Trainer};
use mfswarm::stats::Summary;
use mfswarm::{Error, SeedStream};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::Command;

pub const CURVE_CSV: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_RETURNS_CSV: &str = "eval_returns.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const CONVERGENCE_FIT_CSV: &str = "convergence_fit.csv";
pub const OPENLOOP_CSV: &str = "openloop.csv";
pub const OPENLOOP_SUMMARY_CSV: &str = "openloop_summary.csv";
pub const OPENLOOP_SEQUENCE: &str = "openloop_sequence.json";
pub const SWEEP_SUMMARY_CSV: &str = "sweep_summary.csv";

/// Runs `command` and finalizes its manifest whether or not it succeeds.
pub fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    let mut run = Run::start(command.name(), cfg)?;
    let outcome = match command {
        Command::Train(_) => cmd_train(cfg, &mut run),
        Command::Eval(_) => cmd_eval(cfg, &mut run),
        Command::Convergence(_) => cmd_convergence(cfg, &mut run),
        Command::Openloop(_) => cmd_openloop(cfg, &mut run),
        Command::SweepCrep(_) => cmd_sweep_crep(cfg, &mut run),
        Command::Plot(p) => crate::plot::cmd_plot(&p.input, &mut run),
    };
    run.finish(&outcome)?;
    outcome
}

fn write_csv<T: Serialize>(run: &mut Run, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = run.path(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    run.record(name);
    Ok(())
}

fn write_json<T: Serialize>(run: &mut Run, name: &str, value: &T) -> Result<()> {
    let path = run.path(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?).with_context(|| format!("cannot write {}", path.display()))?;
    run.record(name);
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn cmd_train(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let mut ppo = cfg.ppo.clone();
    ppo.executor = cfg.run.executor;
    let out_checkpoint = run.path(CHECKPOINT_FILE);
    let mut trainer = match &cfg.run.checkpoint {
        Some(path) => {
            if same_file(path, &out_checkpoint) {
                bail!("refusing to overwrite the input checkpoint {}; choose another --out", path.display());
            }
            let ck = TrainCheckpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            let env = TaskEnv::build(&ck.meta.run, ck.meta.ppo.action_mode)?;
            let mut t = Trainer::resume(env, &ck)?;
            t.cfg.total_iterations = ppo.total_iterations;
            t.cfg.executor = ppo.executor;
            info!("resuming {} at iteration {}", path.display(), t.state.iteration);
            t
        }
        None => {
            let spec = RunSpec {
                env: cfg.env.build()?,
                marl: cfg.run.marl,
            };
            TaskTrainer::for_run(spec, ppo.clone(), cfg.run.seed)?.0
        }
    };
    let spec = RunSpec {
        env: match &trainer.env {
            TaskEnv::Mfc(e) => e.cfg.clone(),
            TaskEnv::Marl(e) => e.cfg.clone(),
        },
        marl: matches!(trainer.env, TaskEnv::Marl(_)),
    };
    let curve_path = run.path(CURVE_CSV);
    let mut curve = csv::Writer::from_path(&curve_path).with_context(|| format!("cannot write {}", curve_path.display()))?;
    run.record(CURVE_CSV);
    let total = trainer.cfg.total_iterations as u64;
    let every = cfg.train.checkpoint_every as u64;
    while trainer.state.iteration < total {
        let row = trainer.iterate()?;
        curve.serialize(row)?;
        curve.flush()?;
        info!(
            "iteration {} env_steps {} mean_return {:.4} kl {:.2e}",
            row.iteration, row.env_steps, row.mean_return, row.mean_kl
        );
        if every > 0 && row.iteration % every == 0 && row.iteration < total {
            let name = format!("checkpoints/iter_{:05}.json", row.iteration);
            std::fs::create_dir_all(run.path("checkpoints"))?;
            trainer.checkpoint(spec.clone()).save(&run.path(&name))?;
            run.record(name);
        }
    }
    trainer.checkpoint(spec).save(&out_checkpoint)?;
    run.record(CHECKPOINT_FILE);
    Ok(())
}

/// Loads the configured checkpoint and checks it against `env`.
fn load_policy(cfg: &RunConfig, env: &EnvConfig) -> Result<TrainCheckpoint> {
    let path = cfg
        .run
        .checkpoint
        .as_ref()
        .context("this command needs a trained policy; pass --checkpoint PATH")?;
    let ck = TrainCheckpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    if ck.meta.run.env.kind != env.kind {
        bail!(
            "checkpoint {} was trained on {}, but the configured environment is {}",
            path.display(),
            ck.meta.run.env.kind,
            env.kind
        );
    }
    let spec = RunSpec {
        env: env.clone(),
        marl: ck.meta.run.marl,
    };
    let rl = TaskEnv::build(&spec, ck.meta.ppo.action_mode)?.spec();
    if rl.obs_dim != ck.shape.obs_dim || rl.action_dim != ck.shape.action_dim {
        bail!(
            "checkpoint {} maps {} observations to {} actions; the environment needs {} -> {}",
            path.display(),
            ck.shape.obs_dim,
            ck.shape.action_dim,
            rl.obs_dim,
            rl.action_dim
        );
    }
    Ok(ck)
}

#[derive(Serialize)]
struct ReturnRow {
    n_agents: usize,
    episode: usize,
    #[serde(rename = "return")]
    episode_return: f64,
}

#[derive(Serialize)]
struct EvalDoc<'a> {
    checkpoint: Option<&'a Path>,
    env: &'a str,
    explore: bool,
    rows: &'a [EvalRow],
}

fn cmd_eval(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let env = cfg.env.build()?;
    let ck = load_policy(cfg, &env)?;
    let ctrl = Controller::Policy {
        params: &ck.params,
        squash: ck.squash,
        explore: cfg.eval.explore,
    };
    let results = evaluate(
        &ctrl,
        &env,
        &cfg.eval.n_list,
        cfg.eval.episodes,
        SeedStream::new(cfg.run.seed),
        cfg.run.executor,
    )?;
    let rows: Vec<EvalRow> = results.iter().map(|(r, _)| *r).collect();
    for r in &rows {
        info!("N={} mean {:.4} 95% CI [{:.4}, {:.4}]", r.n_agents, r.mean, r.ci_low, r.ci_high);
    }
    write_csv(run, EVAL_CSV, &rows)?;
    write_csv(
        run,
        EVAL_RETURNS_CSV,
        results.iter().flat_map(|(r, returns)| {
            returns.iter().enumerate().map(move |(e, &x)| ReturnRow {
                n_agents: r.n_agents,
                episode: e,
                episode_return: x,
            })
        }),
    )?;
    let doc = EvalDoc {
        checkpoint: cfg.run.checkpoint.as_deref(),
        env: env.kind.name(),
        explore: cfg.eval.explore,
        rows: &rows,
    };
    write_json(run, "eval.json", &doc)
}

#[derive(Serialize)]
struct FitRow {
    t: usize,
    slope: f64,
    intercept: f64,
    monotone_within_ci: bool,
}

fn cmd_convergence(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let env = cfg.env.build()?;
    let c = &cfg.convergence;
    let conv = ConvergenceConfig {
        n_list: c.n_list.clone(),
        times: c.times.clone(),
        episodes: c.episodes,
        reference_particles: c.reference_particles,
    };
    let seed = SeedStream::new(cfg.run.seed);
    let result = match &cfg.run.checkpoint {
        Some(_) => {
            let ck = load_policy(cfg, &env)?;
            let ctrl = Controller::Policy {
                params: &ck.params,
                squash: ck.squash,
                explore: cfg.eval.explore,
            };
            convergence(&ctrl, &env, &conv, seed, cfg.run.executor)?
        }
        None => {
            info!("no checkpoint given; using the centroid test policy with gain {}", c.gain);
            let rule = centroid_rule(env.grid, c.gain, c.rule_std, env.space.action_radius);
            convergence(&Controller::Rule(&rule), &env, &conv, seed, cfg.run.executor)?
        }
    };
    for r in &result.rows {
        info!("N={} t={} gap {:.4e} [{:.4e}, {:.4e}]", r.n_agents, r.t, r.mean_gap, r.ci_low, r.ci_high);
    }
    let fits: Vec<FitRow> = result
        .fits
        .iter()
        .map(|&(t, slope, intercept)| {
            let rows: Vec<_> = result.rows.iter().filter(|r| r.t == t).copied().collect();
            FitRow {
                t,
                slope,
                intercept,
                monotone_within_ci: monotone_within_ci(&rows),
            }
        })
        .collect();
    for f in &fits {
        info!("t={} slope {:.3} monotone {}", f.t, f.slope, f.monotone_within_ci);
    }
    write_csv(run, CONVERGENCE_CSV, &result.rows)?;
    write_csv(run, CONVERGENCE_FIT_CSV, &fits)?;
    write_json(run, "convergence.json", &result)
}

#[derive(Serialize)]
struct OpenLoopSummaryRow {
    n_agents: usize,
    episodes: usize,
    closed_mean: f64,
    closed_ci_low: f64,
    closed_ci_high: f64,
    open_mean: f64,
    open_ci_low: f64,
    open_ci_high: f64,
    abs_gap: f64,
    relative_gap: f64,
}

fn cmd_openloop(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let env = cfg.env.build()?;
    if !env.kind.has_deterministic_limit() {
        return Err(Error::StochasticLimit(format!(
            "open-loop replay needs a deterministic mean-field limit, and {} has random task arrivals",
            env.kind
        ))
        .into());
    }
    let ck = load_policy(cfg, &env)?;
    let ctrl = Controller::Policy {
        params: &ck.params,
        squash: ck.squash,
        explore: cfg.eval.explore,
    };
    let o = &cfg.openloop;
    let (seq, rows) = openloop_experiment(
        &ctrl,
        &env,
        &o.n_list,
        o.episodes,
        o.record_particles,
        SeedStream::new(cfg.run.seed),
        cfg.run.executor,
    )?;
    let path = run.path(OPENLOOP_SEQUENCE);
    std::fs::write(&path, seq.to_json()?).with_context(|| format!("cannot write {}", path.display()))?;
    run.record(OPENLOOP_SEQUENCE);
    let summary: Vec<OpenLoopSummaryRow> = o
        .n_list
        .iter()
        .map(|&n| {
            let (closed, open): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.n_agents == n).map(|r| (r.closed_loop, r.open_loop)).unzip();
            let (c, p) = (Summary::of(&closed), Summary::of(&open));
            let gap = (p.mean - c.mean).abs();
            info!("N={n} closed {:.4} open {:.4} relative gap {:.4}", c.mean, p.mean, gap / c.mean.abs());
            OpenLoopSummaryRow {
                n_agents: n,
                episodes: c.n,
                closed_mean: c.mean,
                closed_ci_low: c.ci_low,
                closed_ci_high: c.ci_high,
                open_mean: p.mean,
                open_ci_low: p.ci_low,
                open_ci_high: p.ci_high,
                abs_gap: gap,
                relative_gap: gap / c.mean.abs(),
            }
        })
        .collect();
    write_csv(run, OPENLOOP_CSV, &rows)?;
    write_csv(run, OPENLOOP_SUMMARY_CSV, &summary)
}

#[derive(Serialize)]
struct SafetyRow {
    episode: usize,
    c_rep: f64,
    #[serde(rename = "return")]
    episode_return: f64,
    min_distance: f64,
    singularity_count: usize,
}

#[derive(Serialize)]
struct PlainRow {
    episode: usize,
    #[serde(rename = "return")]
    episode_return: f64,
    min_distance: f64,
}

/// Per `(N, c_rep)` statistics; `c_rep` is `plain` for runs without avoidance.
#[derive(Serialize)]
pub struct SweepSummaryRow {
    pub n_agents: usize,
    pub c_rep: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub return_ci_low: f64,
    pub return_ci_high: f64,
    pub mean_min_distance: f64,
    pub min_distance_ci_low: f64,
    pub min_distance_ci_high: f64,
    pub worst_min_distance: f64,
    pub mean_singularities: f64,
}

fn summarize(n: usize, label: String, rows: &[&SweepRow]) -> SweepSummaryRow {
    let ret = Summary::of(&rows.iter().map(|r| r.episode_return).collect::<Vec<_>>());
    let dist: Vec<f64> = rows.iter().map(|r| r.min_distance).collect();
    let d = Summary::of(&dist);
    SweepSummaryRow {
        n_agents: n,
        c_rep: label,
        episodes: ret.n,
        mean_return: ret.mean,
        return_ci_low: ret.ci_low,
        return_ci_high: ret.ci_high,
        mean_min_distance: d.mean,
        min_distance_ci_low: d.ci_low,
        min_distance_ci_high: d.ci_high,
        worst_min_distance: dist.iter().copied().fold(f64::INFINITY, f64::min),
        mean_singularities: rows.iter().map(|r| r.singularity_count as f64).sum::<f64>() / rows.len().max(1) as f64,
    }
}

fn cmd_sweep_crep(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let env = cfg.env.build()?;
    let ck = load_policy(cfg, &env)?;
    let ctrl = Controller::Policy {
        params: &ck.params,
        squash: ck.squash,
        explore: cfg.eval.explore,
    };
    let s = &cfg.sweep;
    let apf: &ApfConfig = &cfg.apf;
    let rows = sweep_crep(
        &ctrl,
        &env,
        apf,
        &s.n_list,
        &s.crep_list,
        s.episodes,
        SeedStream::new(cfg.run.seed),
        cfg.run.executor,
    )?;
    let mut summary = Vec::new();
    for &n in &s.n_list {
        let plain: Vec<&SweepRow> = rows.iter().filter(|r| r.n_agents == n && r.c_rep.is_none()).collect();
        write_csv(
            run,
            &format!("plain_n{n}.csv"),
            plain.iter().map(|r| PlainRow {
                episode: r.episode,
                episode_return: r.episode_return,
                min_distance: r.min_distance,
            }),
        )?;
        summary.push(summarize(n, "plain".into(), &plain));
        write_csv(
            run,
            &format!("sweep_n{n}.csv"),
            rows.iter().filter(|r| r.n_agents == n).filter_map(|r| {
                r.c_rep.map(|c| SafetyRow {
                    episode: r.episode,
                    c_rep: c,
                    episode_return: r.episode_return,
                    min_distance: r.min_distance,
                    singularity_count: r.singularity_count,
                })
            }),
        )?;
        for &c in &s.crep_list {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.n_agents == n && r.c_rep == Some(c)).collect();
            summary.push(summarize(n, c.to_string(), &sel));
        }
    }
    for r in &summary {
        info!(
            "N={} c_rep={} return {:.4} min distance {:.4} singularities {:.1}",
            r.n_agents, r.c_rep, r.mean_return, r.mean_min_distance, r.mean_singularities
        );
    }
    write_csv(run, SWEEP_SUMMARY_CSV, &summary)
}
