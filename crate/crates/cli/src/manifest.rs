//! Run manifest written next to every command's artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize)]
pub struct Artifacts {
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub figures: Vec<PathBuf>,
}

/// Provenance of one command invocation. Timestamps make this the one
/// output file that differs between otherwise identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub artifacts: Artifacts,
    pub started_unix_secs: u64,
    pub finished_unix_secs: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// `config_text` is the effective configuration, hashed as written.
    pub fn start(command: &str, config_text: &str, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            config_hash: sha256_hex(config_text.as_bytes()),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            artifacts: Artifacts::default(),
            started_unix_secs: now(),
            finished_unix_secs: None,
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`, after
    /// checking that every referenced artifact exists.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        let a = &self.artifacts;
        if let Some(p) = a.checkpoints.iter().chain(&a.reports).chain(&a.figures).find(|p| !p.exists()) {
            return Err(CliError::Io(format!("artifact {} was not written", p.display())));
        }
        self.finished_unix_secs = Some(now());
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
