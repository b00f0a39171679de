//! Run manifests: what was run, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{read_file, write_file, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// RFC 3339 UTC; the only field that changes between identical reruns.
    pub timestamp: String,
    pub seed: Option<u64>,
    /// SHA-256 of the canonical JSON of the command's options.
    pub config_sha256: String,
    /// Input path (as given) to content SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Self {
        let canonical = serde_json::to_vec(config).expect("options serialize");
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed,
            config_sha256: sha256_hex(&canonical),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<String, CliError> {
        let digest = sha256_hex(&read_file(path)?);
        self.inputs.insert(path.display().to_string(), digest.clone());
        Ok(digest)
    }

    /// Writes `contents` to `dir/name` and records its digest.
    pub fn write_output(&mut self, dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
        write_file(&dir.join(name), contents)?;
        self.outputs.insert(name.into(), sha256_hex(contents));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        write_file(&dir.join(MANIFEST_FILE), s.as_bytes())
    }
}
