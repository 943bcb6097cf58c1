//! Run manifests: every command writes a JSON manifest next to its
//! outputs with the echoed configuration and content hashes of all input
//! and output files, so identical runs are verifiable byte for byte.

use anyhow::Context;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Content hash (sha256) per input path.
    pub inputs: BTreeMap<String, String>,
    /// Content hash (sha256) per output path.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Manifest {
        Manifest {
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let hash = fwm::hashing::hash_file(path)
            .with_context(|| format!("hashing input {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> anyhow::Result<()> {
        let hash = fwm::hashing::hash_file(path)
            .with_context(|| format!("hashing output {}", path.display()))?;
        self.outputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Writes `<primary_output>.manifest.json`.
    pub fn write_beside(&self, primary_output: &Path) -> anyhow::Result<PathBuf> {
        let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary_output.with_file_name(name);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
