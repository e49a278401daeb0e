//! Output directories and the run manifest. The manifest is the only
//! artifact holding wall-clock values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration, defaults included.
    pub config: BTreeMap<String, String>,
    /// Hash embedded in the checkpoints this run wrote.
    pub config_hash: Option<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub outcome: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Wall-clock seconds per named step.
    pub timings: BTreeMap<String, f64>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects every file written during a run and finally the manifest.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    pub fn start(command: &str, dir: &Path, settings: Option<&Settings>, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                config: settings.map(|s| s.values().clone()).unwrap_or_default(),
                config_hash: None,
                seed,
                inputs: Vec::new(),
                artifacts: Vec::new(),
                outcome: "completed".into(),
                started_unix: unix_now(),
                finished_unix: 0.0,
                timings: BTreeMap::new(),
            },
            clock: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = digest(path)?;
        if !self.manifest.inputs.iter().any(|i| i.path == d.path) {
            self.manifest.inputs.push(d);
        }
        Ok(())
    }

    /// Records a file some other writer has put at `path(name)`.
    pub fn record(&mut self, name: &str) {
        if !self.manifest.artifacts.iter().any(|a| a == name) {
            self.manifest.artifacts.push(name.into());
        }
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).with_context(|| format!("{}", p.display()))?;
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn time(&mut self, step: &str, seconds: f64) {
        self.manifest.timings.insert(step.into(), seconds);
    }

    pub fn set_config_hash(&mut self, hash: String) {
        self.manifest.config_hash = Some(hash);
    }

    pub fn set_outcome(&mut self, outcome: &str) {
        self.manifest.outcome = outcome.into();
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = unix_now();
        self.time("total", self.clock.elapsed().as_secs_f64());
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        let p = self.path(MANIFEST);
        std::fs::write(&p, text).with_context(|| format!("{}", p.display()))
    }
}
