//! Run manifests: what produced each artifact on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use damf_core::corpus::file_sha256;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetVersion {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub datasets: Vec<DatasetVersion>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_hash: None,
            datasets: Vec::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            details: serde_json::Value::Null,
        }
    }

    pub fn dataset(&mut self, name: &str, path: &Path) -> Result<()> {
        self.datasets.push(DatasetVersion {
            name: name.to_string(),
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    /// Stamps the finish time and writes the manifest as JSON.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = Some(now());
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Manifest location for a single-file output.
pub fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
