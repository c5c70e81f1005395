use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha3_256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Artifact {
            path: path.to_path_buf(),
            sha3_256: file_checksum(path)?,
        })
    }
}

/// Record of one run. `argv` replays it; the checksums let a replay confirm
/// it produced the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub deterministic: bool,
    /// Effective configuration after merging defaults, config file and flags.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        crate::formats::write_text(path, &(text + "\n"))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = crate::formats::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn checksum(bytes: &[u8]) -> String {
    Sha3_256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_checksum(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(checksum(&bytes))
}
