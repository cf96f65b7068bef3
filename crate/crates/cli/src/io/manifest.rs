//! Run manifests: every command writes one TOML manifest listing its input
//! and output hashes, the effective configuration, and the only timestamp a
//! run produces (outputs themselves stay byte-identical across reruns).

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::{file_sha256_hex, Result};

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub unix_time: u64,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
    /// Effective configuration after merging defaults (TOML text).
    pub effective_config: String,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    threads: usize,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    effective_config: String,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, threads: usize, effective_config: String) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            effective_config,
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<ManifestEntry>> {
            paths
                .iter()
                .map(|p| {
                    Ok(ManifestEntry {
                        path: p.display().to_string(),
                        sha256: file_sha256_hex(p)?,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            command: self.command,
            seed: self.seed,
            threads: self.threads,
            unix_time: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            effective_config: self.effective_config,
        };
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| super::IoError::Header(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
