use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record for one command invocation, kept in its output
/// directory. Written before any other output and rewritten with the
/// artifact checksums once the command finishes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// File name → sha256 hex.
    pub artifacts: BTreeMap<String, String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn begin(command: &str, config_paths: Vec<PathBuf>, seed: Option<u64>, out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        let m = Self {
            command: command.to_owned(),
            config_paths,
            seed,
            out_dir: out_dir.to_path_buf(),
            artifacts: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        };
        m.write()?;
        Ok(m)
    }

    /// Writes `bytes` to `name` inside the output directory and records its checksum.
    pub fn artifact(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(name.to_owned(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write(&self) -> Result<(), CliError> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
