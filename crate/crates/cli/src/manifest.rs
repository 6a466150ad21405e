//! Run manifests and content hashes.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use copsd::corpus::{DISTILL_FILE, EVAL_FILE, PRETRAIN_FILE, VOCAB_FILE};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// Hash over the four corpus files, each framed by its name and length.
pub fn corpus_hash(dir: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for name in [PRETRAIN_FILE, DISTILL_FILE, EVAL_FILE, VOCAB_FILE] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(role: &str, path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub subcommand: String,
    pub tool_version: String,
    /// Complete effective configuration, defaults filled in.
    pub config: Value,
    pub corpus_hash: Option<String>,
    /// Inputs this run was derived from.
    pub lineage: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(run_id: &str, subcommand: &str, config: Value) -> Self {
        Self {
            run_id: run_id.to_string(),
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            corpus_hash: None,
            lineage: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_output(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileRef::of(role, path)?);
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn corpus_hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        for f in [PRETRAIN_FILE, DISTILL_FILE, EVAL_FILE, VOCAB_FILE] {
            std::fs::write(dir.path().join(f), f).unwrap();
        }
        let a = corpus_hash(dir.path()).unwrap();
        assert_eq!(a, corpus_hash(dir.path()).unwrap());
        std::fs::write(dir.path().join(EVAL_FILE), "changed").unwrap();
        assert_ne!(a, corpus_hash(dir.path()).unwrap());
        std::fs::remove_file(dir.path().join(EVAL_FILE)).unwrap();
        assert!(corpus_hash(dir.path()).is_err());
    }
}
