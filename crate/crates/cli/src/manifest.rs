use std::collections::BTreeMap;
use std::path::Path;

use hoa_core::io::{read_json, write_json};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Run record kept next to the artifacts. It holds no timestamps, host
/// names or absolute paths so that repeated runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    pub config_sha256: String,
    /// Configured input files, keyed by the path written in the config.
    pub inputs: BTreeMap<String, String>,
    /// Upstream artifacts, keyed by their path in the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: hoa_core::VERSION.into(),
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    /// Adds or replaces one stage's record in the manifest at `path`. An
    /// unreadable existing manifest is replaced.
    pub fn record(path: &Path, stage: &str, record: StageRecord) -> Result<(), CliError> {
        let mut manifest = read_json::<Manifest>(path).unwrap_or_default();
        let fresh = Manifest::default();
        manifest.tool = fresh.tool;
        manifest.version = fresh.version;
        manifest.core_version = fresh.core_version;
        manifest.stages.insert(stage.to_string(), record);
        Ok(write_json(path, &manifest)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Io(hoa_core::io::IoError::Io { path: path.to_path_buf(), source })
        }
    })?;
    Ok(sha256_hex(&bytes))
}

/// Forward-slash form of a relative path for manifest keys.
pub fn key(path: &Path) -> String {
    path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}
