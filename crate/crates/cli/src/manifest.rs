//! Run manifests: what a command read, what it wrote, and with which
//! settings, so a run can be repeated and its outputs compared.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    /// Outputs that embed wall-clock timings and so differ between runs.
    pub timed_outputs: Vec<String>,
    pub elapsed_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Collects paths while a command runs and writes `manifest.json` at the end.
pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timed: Vec<PathBuf>,
    started: std::time::Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timed: Vec::new(),
            started: std::time::Instant::now(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn timed_output(&mut self, p: impl Into<PathBuf>) {
        let p = p.into();
        self.timed.push(p.clone());
        self.outputs.push(p);
    }

    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs.iter().map(|p| record(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| record(p)).collect::<Result<_>>()?,
            timed_outputs: self.timed.iter().map(|p| p.display().to_string()).collect(),
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join("manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
