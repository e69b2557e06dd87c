use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cnsm_core::kb::sha256_hex;

/// Record of one CLI invocation: what it read, with which seeds and configs,
/// and the digest of every artifact it wrote.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of the effective configuration, serialized as JSON.
    pub config_digests: BTreeMap<String, String>,
    /// Dataset ids, model ids or file paths read by the run.
    pub inputs: Vec<String>,
    /// Artifact path (relative to the KB root when there is one) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Shift applied to loop ticks before they entered the KB feedback log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_tick_offset: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            ..Self::default()
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn config<T: Serialize>(&mut self, name: &str, cfg: &T) -> Result<()> {
        let json = serde_json::to_string(cfg)?;
        self.config_digests.insert(name.to_string(), sha256_hex(json.as_bytes()));
        Ok(())
    }

    pub fn input(&mut self, what: impl Into<String>) {
        self.inputs.push(what.into());
    }

    pub fn output(&mut self, name: impl Into<String>, digest: String) {
        self.outputs.insert(name.into(), digest);
    }

    /// Writes `bytes` to `path` and records its digest under `name`.
    pub fn write_file(&mut self, name: impl Into<String>, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.output(name, sha256_hex(bytes));
        Ok(())
    }

    /// Saves under `<kb>/runs/` with a sequence number, or at `explicit`.
    pub fn save(&self, kb_root: Option<&Path>, explicit: Option<&Path>) -> Result<PathBuf> {
        let path = match (explicit, kb_root) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(root)) => {
                let dir = root.join("runs");
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let n = fs::read_dir(&dir)?.count() + 1;
                dir.join(format!("{n:04}-{}.json", self.command))
            }
            (None, None) => anyhow::bail!("no location for the run manifest"),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
