//! Run configuration: TOML file, then `MFSWARM_<SECTION>_<KEY>` environment
//! variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mfswarm::collision::ApfConfig;
use mfswarm::envs::{EnvConfig, EnvKind};
use mfswarm::ppo::PpoConfig;
use mfswarm::Executor;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "MFSWARM_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub marl: bool,
    pub executor: Executor,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            out: PathBuf::from("runs/latest"),
            checkpoint: None,
            marl: false,
            executor: Executor::Parallel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub n_agents: usize,
    /// Defaults to the task's standard horizon.
    pub horizon: Option<usize>,
    pub move_cost: f64,
    pub task_arrival_rate: f64,
    pub max_tasks: usize,
    pub target_samples: usize,
    pub fixed_target_seed: Option<u64>,
    pub init_min_separation: f64,
    pub noise_std: [f64; 2],
}

impl Default for EnvSection {
    fn default() -> Self {
        let base = EnvConfig::new(EnvKind::Aggregation);
        EnvSection {
            kind: EnvKind::Aggregation,
            n_agents: base.n_agents,
            horizon: None,
            move_cost: base.move_cost,
            task_arrival_rate: base.task_arrival_rate,
            max_tasks: base.max_tasks,
            target_samples: base.target_samples,
            fixed_target_seed: None,
            init_min_separation: 0.0,
            noise_std: base.space.noise_std,
        }
    }
}

impl EnvSection {
    pub fn build(&self) -> Result<EnvConfig> {
        let mut cfg = EnvConfig::new(self.kind).with_agents(self.n_agents);
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg.move_cost = self.move_cost;
        cfg.task_arrival_rate = self.task_arrival_rate;
        cfg.max_tasks = self.max_tasks;
        cfg.target_samples = self.target_samples;
        cfg.fixed_target_seed = self.fixed_target_seed;
        cfg.init_min_separation = self.init_min_separation;
        cfg.space.noise_std = self.noise_std;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Write an intermediate checkpoint every this many iterations (0: never).
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { checkpoint_every: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_list: Vec<usize>,
    pub episodes: usize,
    /// Sample actions instead of using the policy mean.
    pub explore: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_list: vec![10, 50, 100, 300],
            episodes: 100,
            explore: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub n_list: Vec<usize>,
    pub times: Vec<usize>,
    pub episodes: usize,
    pub reference_particles: usize,
    /// Test policy used when no checkpoint is given.
    pub gain: f64,
    pub rule_std: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        ConvergenceSection {
            n_list: vec![10, 50, 100, 300, 1000],
            times: vec![10],
            episodes: 200,
            reference_particles: 10_000,
            gain: 1.0,
            rule_std: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenLoopSection {
    pub n_list: Vec<usize>,
    pub episodes: usize,
    pub record_particles: usize,
}

impl Default for OpenLoopSection {
    fn default() -> Self {
        OpenLoopSection {
            n_list: vec![10, 100, 300],
            episodes: 100,
            record_particles: 300,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_list: Vec<usize>,
    pub crep_list: Vec<f64>,
    pub episodes: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            n_list: vec![100],
            crep_list: vec![0.01, 0.1, 1.0],
            episodes: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub train: TrainSection,
    pub ppo: PpoConfig,
    pub apf: ApfConfig,
    pub eval: EvalSection,
    pub convergence: ConvergenceSection,
    pub openloop: OpenLoopSection,
    pub sweep: SweepSection,
}

/// Reads a TOML config or the `config` entry of a run manifest.
pub fn load_file(path: &Path) -> Result<(toml::Table, Option<String>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let doc: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let config = doc
            .get("config")
            .with_context(|| format!("{} has no config entry", path.display()))?;
        let cfg: RunConfig = serde_json::from_value(config.clone())
            .with_context(|| format!("invalid config in {}", path.display()))?;
        let command = doc.get("command").and_then(|c| c.as_str()).map(String::from);
        return Ok((toml::Table::try_from(&cfg)?, command));
    }
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("invalid TOML in {}", path.display()))?;
    Ok((table, None))
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `MFSWARM_<SECTION>_<KEY>=value` pairs to `table`.
pub fn apply_env_overrides<I>(table: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, value) in vars {
        let rest = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let Some((section, field)) = rest.split_once('_') else {
            bail!("environment override {key} must name a section and a key");
        };
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(sec) = entry.as_table_mut() else {
            bail!("environment override {key} targets a non-table entry");
        };
        sec.insert(field.to_string(), parse_value(&value));
    }
    Ok(())
}

pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    let cfg: RunConfig = table.try_into().context("invalid configuration")?;
    cfg.ppo.validate()?;
    cfg.apf.validate()?;
    Ok(cfg)
}

/// Parses a comma-separated list such as `10,50,100`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<Vec<T>, String>>()
        .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(v) })
}
