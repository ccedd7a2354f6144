//! Run manifests: every command records what it consumed and produced.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the resolved configuration (hex), when the command has one.
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timestamp_utc: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp_utc: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn with_config_bytes(mut self, bytes: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.config_digest = Some(format!("{:x}", hasher.finalize()));
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn with_output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Writes `<primary_output>.manifest.json`.
    pub fn write_alongside(&self, primary_output: &Path) -> Result<()> {
        let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary_output.with_file_name(name);
        let file = std::fs::File::create(&path)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}
