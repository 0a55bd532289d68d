//! Experiment harness for `mfswarm`: training, evaluation, convergence,
//! open-loop replay, collision-avoidance sweeps and plotting.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use mfswarm::envs::EnvKind;
use mfswarm::Executor;

use crate::config::{apply_env_overrides, from_table, load_file, parse_list, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "mfswarm", version, about = "Mean-field control of large 2D swarms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO; `--checkpoint` resumes a previous run.
    Train(CommonArgs),
    /// Evaluate a checkpoint over a list of swarm sizes.
    Eval(CommonArgs),
    /// Reward gap between finite swarms and a large reference ensemble.
    Convergence(CommonArgs),
    /// Record an open-loop rule sequence and replay it on finite swarms.
    Openloop(CommonArgs),
    /// Collision-avoidance runs over a list of repulsion coefficients.
    SweepCrep(CommonArgs),
    /// Render SVG figures from the CSV outputs of earlier runs.
    Plot(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Convergence(_) => "convergence",
            Command::Openloop(_) => "openloop",
            Command::SweepCrep(_) => "sweep-crep",
            Command::Plot(_) => "plot",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Train(a) | Command::Eval(a) | Command::Convergence(a) | Command::Openloop(a) | Command::SweepCrep(a) => a,
            Command::Plot(p) => &p.common,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML config file or the manifest.json of an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// aggregation, formation or taskalloc.
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub agents: Option<usize>,
    /// Parameter-shared per-agent PPO instead of mean-field control.
    #[arg(long)]
    pub marl: bool,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Comma-separated swarm sizes.
    #[arg(long, value_name = "LIST", value_parser = parse_list::<usize>)]
    pub n_list: Option<std::vec::Vec<usize>>,
    /// Comma-separated repulsion coefficients.
    #[arg(long, value_name = "LIST", value_parser = parse_list::<f64>)]
    pub crep_list: Option<std::vec::Vec<f64>>,
    /// Total training iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// sequential or parallel.
    #[arg(long, value_parser = parse_executor)]
    pub executor: Option<Executor>,
}

#[derive(Clone, Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run directory or a single CSV file to render.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
}

fn parse_executor(s: &str) -> std::result::Result<Executor, String> {
    match s.to_ascii_lowercase().as_str() {
        "sequential" => Ok(Executor::Sequential),
        "parallel" => Ok(Executor::Parallel),
        other => Err(format!("unknown executor '{other}' (expected sequential or parallel)")),
    }
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

/// Builds the configuration of `command` from its file, the process
/// environment and the command-line flags, in increasing precedence.
pub fn resolve_config<I>(command: &Command, vars: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let args = command.common();
    let mut table = toml::Table::new();
    if let Some(path) = &args.config {
        let (t, recorded) = load_file(path)?;
        if let Some(recorded) = recorded {
            if recorded != command.name() {
                bail!("{} records a '{recorded}' run, not '{}'", path.display(), command.name());
            }
        }
        table = t;
    }
    apply_env_overrides(&mut table, vars)?;
    let mut cfg = from_table(table)?;
    apply_flags(&mut cfg, command);
    cfg.ppo.validate()?;
    cfg.apf.validate()?;
    cfg.env.build()?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, command: &Command) {
    let a = command.common();
    if let Some(s) = a.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.run.out = o.clone();
    }
    if let Some(k) = a.env {
        cfg.env.kind = k;
    }
    if let Some(n) = a.agents {
        cfg.env.n_agents = n;
    }
    if a.marl {
        cfg.run.marl = true;
    }
    if let Some(c) = &a.checkpoint {
        cfg.run.checkpoint = Some(c.clone());
    }
    if let Some(i) = a.iters {
        cfg.ppo.total_iterations = i;
    }
    if let Some(x) = a.executor {
        cfg.run.executor = x;
    }
    if let Some(c) = &a.crep_list {
        cfg.sweep.crep_list = c.clone();
    }
    let (episodes, n_list) = match command {
        Command::Eval(_) => (Some(&mut cfg.eval.episodes), Some(&mut cfg.eval.n_list)),
        Command::Convergence(_) => (Some(&mut cfg.convergence.episodes), Some(&mut cfg.convergence.n_list)),
        Command::Openloop(_) => (Some(&mut cfg.openloop.episodes), Some(&mut cfg.openloop.n_list)),
        Command::SweepCrep(_) => (Some(&mut cfg.sweep.episodes), Some(&mut cfg.sweep.n_list)),
        Command::Train(_) | Command::Plot(_) => (None, None),
    };
    if let (Some(dst), Some(e)) = (episodes, a.episodes) {
        *dst = e;
    }
    if let (Some(dst), Some(n)) = (n_list, &a.n_list) {
        *dst = n.clone();
    }
}

/// Runs a parsed command line against the current process environment.
pub fn execute(cli: Cli) -> std::result::Result<(), CliError> {
    execute_with_env(cli, std::env::vars())
}

pub fn execute_with_env<I>(cli: Cli, vars: I) -> std::result::Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = resolve_config(&cli.command, vars).map_err(CliError::Usage)?;
    if let Command::Plot(p) = &cli.command {
        if !p.input.exists() {
            return Err(CliError::Runtime(anyhow::anyhow!("plot input {} does not exist", p.input.display())));
        }
        if p.common.out.is_none() {
            cfg.run.out = plot::default_output_dir(&p.input);
        }
    }
    commands::run(&cli.command, &cfg).map_err(CliError::Runtime)
}
