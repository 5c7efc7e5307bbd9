//! Run manifests: input and output digests, seeds and tool version.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths as given on the command line.
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::io(path, e))?;
        Ok(ssm_core::netmodel::parse_json(&text, "run manifest")?)
    }

    /// Files whose current digest differs from the stored one, or that are missing.
    pub fn verify(&self, manifest_path: &Path) -> Vec<String> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let inputs = self.inputs.iter().map(|f| (PathBuf::from(&f.path), f));
        let outputs = self.outputs.iter().map(|f| (dir.join(&f.path), f));
        inputs
            .chain(outputs)
            .filter(|(p, f)| sha256_file(p).map(|d| d != f.sha256).unwrap_or(true))
            .map(|(_, f)| f.path.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
