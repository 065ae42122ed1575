//! Run manifests: resolved inputs plus SHA-256 of every output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tcsim::phases::{PointParams, SweepSpec};

use crate::config::AnalysisConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Outputs were written from a run that stopped early.
    Partial,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PointParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub platform: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// File name → SHA-256, for every file in the directory but the manifest.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 over the sorted `name:hash` lines of `outputs`.
    pub content_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn platform() -> String {
    format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

fn combined_hash(outputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (name, digest) in outputs {
        h.update(name.as_bytes());
        h.update(b":");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Hashes of the regular files directly inside `dir`, manifest excluded.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST_FILE {
            continue;
        }
        out.insert(name, sha256_hex(&fs::read(entry.path())?));
    }
    Ok(out)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params: None,
            sweep: None,
            analysis: None,
            input: None,
            seed: None,
            platform: platform(),
            wall_clock_s: None,
            status: RunStatus::Ok,
            error: None,
            outputs: BTreeMap::new(),
            content_hash: String::new(),
        }
    }

    /// Hashes the directory's files and writes `manifest.json` into it.
    pub fn seal(mut self, dir: &Path) -> Result<Self, CliError> {
        self.outputs = hash_outputs(dir)?;
        self.content_hash = combined_hash(&self.outputs);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Io(e.into()))?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self)
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format(e.to_string()))
    }

    /// True when the directory's files still match the recorded hashes.
    pub fn verify(&self, dir: &Path) -> Result<bool, CliError> {
        let now = hash_outputs(dir)?;
        Ok(now == self.outputs && combined_hash(&now) == self.content_hash)
    }
}
