//! Run manifests written next to every output as `<out>.manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub subcommand: String,
    /// Fully resolved configuration.
    pub config: Value,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Subcommand-specific results, e.g. the termination reason of a training run.
    pub outcome: Value,
    /// Digest of everything above; identical inputs and config give the same value.
    pub stable_hash: String,
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fingerprint(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| BenchError::io(path, e))?))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Value, seed: Option<u64>, started_at: u64) -> Self {
        Self {
            tool: TOOL.into(),
            tool_version: TOOL_VERSION.into(),
            subcommand: subcommand.into(),
            config,
            inputs: BTreeMap::new(),
            seed,
            outcome: Value::Null,
            stable_hash: String::new(),
            started_at,
            finished_at: started_at,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), fingerprint(path)?);
        Ok(())
    }

    pub fn compute_hash(&self) -> String {
        let stable = serde_json::json!({
            "tool": self.tool,
            "tool_version": self.tool_version,
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "outcome": self.outcome,
        });
        sha256_hex(stable.to_string().as_bytes())
    }

    /// Stamps the finish time and hash, then writes `<out>.manifest.json`.
    pub fn write_for(mut self, out: &Path) -> Result<Self> {
        self.finished_at = now();
        self.stable_hash = self.compute_hash();
        let path = manifest_path(out);
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| BenchError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
        Ok(self)
    }
}
