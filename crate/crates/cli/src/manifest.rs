use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;

/// Record of one invocation. Timestamps live only here so that every other
/// output file is a pure function of the arguments.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    /// Creates the manifest and writes it immediately, before any output.
    pub fn begin(
        subcommand: &str,
        path: PathBuf,
        seed: Option<u64>,
        config: Value,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> Result<Self> {
        let m = RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs,
            outputs,
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            path,
        };
        m.write()?;
        Ok(m)
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.to_string();
        self.write()
    }

    /// Records success or failure of `result` and passes it through.
    pub fn conclude<T>(self, result: Result<T>) -> Result<T> {
        self.finish(if result.is_ok() { "ok" } else { "failed" })?;
        result
    }

    fn write(&self) -> Result<()> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(&self.path, json).with_context(|| format!("writing {}", self.path.display()))
    }
}

pub fn manifest_in(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
