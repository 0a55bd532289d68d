//! Run manifest written at the start of a command and finalized at its end.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Commit of the working tree the binary ran in, when available.
    pub git_revision: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    /// Produced files relative to the output directory, sorted.
    pub files: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let rev = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!rev.is_empty()).then_some(rev)
}

/// Tracks the output directory of one command.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    /// Creates the output directory and writes the initial manifest.
    pub fn start(command: &str, config: &RunConfig) -> Result<Run> {
        let dir = config.run.out.clone();
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let run = Run {
            dir,
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                git_revision: git_revision(),
                started_unix: now(),
                finished_unix: None,
                status: RunStatus::Running,
                error: None,
                seeds: vec![config.run.seed],
                config: config.clone(),
                files: Vec::new(),
            },
        };
        run.write()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a produced file given relative to the output directory.
    pub fn record(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.manifest.files.contains(&name) {
            self.manifest.files.push(name);
            self.manifest.files.sort();
        }
    }

    pub fn write(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        self.manifest.finished_unix = Some(now());
        match outcome {
            Ok(()) => self.manifest.status = RunStatus::Ok,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        self.write()
    }
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
}
