//! Run manifests: every CLI output file gets a sibling
//! `<output>.manifest.json` recording the command, its full argument set,
//! the seed, the tool version, and SHA-256 digests of every input file.
//! Re-running the recorded command against inputs with the same digests
//! reproduces the output byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument record of the invocation.
    pub args: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Input files by role (e.g. "cohort", "calipers", "match:0").
    pub inputs: BTreeMap<String, InputRecord>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn begin(command: &str, args: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: file_digest(path)?,
            },
        );
        Ok(())
    }

    /// Stamps the end time and writes `<output>.manifest.json`.
    pub fn finish(mut self, output: &Path) -> Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        let path = manifest_path(output);
        std::fs::write(path, serde_json::to_string_pretty(&self).expect("serializable"))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::error::Error::MatchFileFormat {
            path: path.display().to_string(),
            detail: format!("bad manifest: {e}"),
        })
    }

    /// The digest recorded for a role, if any.
    pub fn input_digest(&self, role: &str) -> Option<&str> {
        self.inputs.get(role).map(|r| r.sha256.as_str())
    }
}

/// Manifest path that sits alongside an output artifact.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
