//! Reproducibility envelope written next to every run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CODE_VERSION: &str = concat!("cl2gen ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub eval: u64,
    pub classifier: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: String,
    pub mode: String,
    pub deterministic: bool,
    pub config: RunConfig,
    pub dataset_path: PathBuf,
    pub dataset_sha256: String,
    /// Set when an existing classifier was supplied rather than trained.
    pub classifier_input: Option<Artifact>,
    pub seeds: Seeds,
    pub artifacts: Vec<Artifact>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(cl2gen_core::Error::from)?;
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(cl2gen_core::Error::from)?)
    }

    /// Recompute every recorded hash; returns the paths that no longer match.
    pub fn verify(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let mut bad = Vec::new();
        for a in self.artifacts.iter().chain(&self.classifier_input) {
            let p = dir.join(&a.path);
            if !p.exists() || file_sha256(&p)? != a.sha256 {
                bad.push(p);
            }
        }
        let data = if self.dataset_path.is_absolute() {
            self.dataset_path.clone()
        } else {
            dir.join(&self.dataset_path)
        };
        if !data.exists() || file_sha256(&data)? != self.dataset_sha256 {
            bad.push(data);
        }
        Ok(bad)
    }
}
