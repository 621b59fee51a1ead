use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use lsd_core::dataio::RunConfig;
use lsd_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunPaths {
    pub bundle: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub stat_json: Option<PathBuf>,
    pub detection_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
}

/// `run.json`: what a run directory holds and which commands produced it.
/// Timestamps live only here so every other artifact stays reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub run_id: String,
    pub config: Option<RunConfig>,
    pub paths: RunPaths,
    pub commands: Vec<CommandRecord>,
}

pub struct Run {
    pub dir: PathBuf,
    artifact: RunArtifact,
    started_at: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn check_run_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::config("run-id", format!("`{id}` must be a plain name of [A-Za-z0-9._-]")))
    }
}

impl Run {
    /// Opens `<root>/<run_id>`, reusing an existing run with that id. Without
    /// an id, a fresh timestamped directory is created.
    pub fn open(root: &Path, run_id: Option<&str>) -> Result<Self> {
        let (run_id, dir) = match run_id {
            Some(id) => {
                check_run_id(id)?;
                (id.to_owned(), root.join(id))
            }
            None => {
                let base = Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
                let mut id = base.clone();
                let mut k = 2;
                while root.join(&id).exists() {
                    id = format!("{base}-{k}");
                    k += 1;
                }
                let dir = root.join(&id);
                (id, dir)
            }
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(RUN_FILE);
        let artifact = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?
        } else {
            RunArtifact { run_id, config: None, paths: RunPaths::default(), commands: Vec::new() }
        };
        Ok(Self { dir, artifact, started_at: now() })
    }

    pub fn paths(&mut self) -> &mut RunPaths {
        &mut self.artifact.paths
    }

    pub fn set_config(&mut self, config: &RunConfig) {
        self.artifact.config = Some(config.clone());
    }

    pub fn finish(mut self, command: &str) -> Result<()> {
        self.artifact.commands.push(CommandRecord {
            command: command.to_owned(),
            started_at: self.started_at.clone(),
            finished_at: now(),
        });
        let path = self.dir.join(RUN_FILE);
        let text = serde_json::to_string_pretty(&self.artifact).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}
