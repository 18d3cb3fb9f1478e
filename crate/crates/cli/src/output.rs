//! Run directory layout, file digests and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Preset;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const ENSEMBLE: &str = "ensemble.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitSeed {
    pub orbit: u64,
    /// ChaCha stream id of the orbit's initial-point stream; the other
    /// purposes differ only in the low byte.
    pub stream_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub preset: Preset,
    pub config_hash: String,
    pub master_seed: u64,
    pub workers: usize,
    /// How per-orbit randomness is derived from the master seed.
    pub seeding: String,
    pub orbits: Vec<OrbitSeed>,
    pub start_index: u64,
    pub end_index: u64,
    pub files: Vec<FileEntry>,
    pub wall_clock_seconds: f64,
}

pub const SEEDING_CONTRACT: &str = "ChaCha8 keyed by splitmix64(master_seed); \
stream = (orbit_index << 8) | purpose; purposes: 1 initial point, 2 digits, 3 coins, \
4 calibration, 5 validation, 6 replicate";

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Malformed {
            path,
            message: e.to_string(),
        })
    }

    /// Files that are missing or whose digest no longer matches.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut gaps = Vec::new();
        for f in &self.files {
            match fs::read(dir.join(&f.path)) {
                Err(_) => gaps.push(format!("missing {}", f.path)),
                Ok(bytes) if sha256_hex(&bytes) != f.sha256 => {
                    gaps.push(format!("digest mismatch {}", f.path))
                }
                Ok(_) => {}
            }
        }
        gaps
    }
}

/// Writes files under a run directory and remembers them, so a failed run
/// can remove what it wrote.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Removes every file written so far (best effort).
    pub fn cleanup(&self) {
        for f in &self.files {
            let _ = fs::remove_file(self.root.join(&f.path));
        }
        let _ = fs::remove_file(self.root.join(MANIFEST));
    }

    pub fn finish(self, manifest: &mut RunManifest) -> Result<(), CliError> {
        manifest.files = self.files.clone();
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        if let Err(e) = fs::write(&path, text) {
            self.cleanup();
            return Err(CliError::io(path, e));
        }
        Ok(())
    }
}

/// CSV with a header row; every cell already formatted.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
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

    #[test]
    fn cleanup_removes_written_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::create(tmp.path().join("run")).unwrap();
        dir.write("a/b.csv", b"x\n1\n").unwrap();
        assert!(tmp.path().join("run/a/b.csv").exists());
        dir.cleanup();
        assert!(!tmp.path().join("run/a/b.csv").exists());
    }

    #[test]
    fn csv_rows_are_quoted_only_when_needed() {
        let b = csv_bytes(&["k", "v"], vec![vec!["1".to_string(), "a,b".to_string()]]);
        assert_eq!(String::from_utf8(b).unwrap(), "k,v\n1,\"a,b\"\n");
    }
}
