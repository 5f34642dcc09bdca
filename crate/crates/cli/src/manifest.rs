//! Run manifests: what was run, with which resolved settings, on which inputs,
//! producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unitary_core::formats::write_atomic;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Working directory the relative paths below are resolved against.
    pub cwd: PathBuf,
    /// Arguments after the program name, with the seed made explicit.
    pub argv: Vec<String>,
    /// Flags in `argv` whose values are output paths.
    pub output_flags: Vec<String>,
    /// Fully resolved configuration, every default spelled out.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub duration_secs: f64,
    pub version: String,
    pub format_version: u32,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, Failure> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// `state.bin` → `state.bin.manifest.json`; a directory gets `manifest.json` inside.
pub fn manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        return primary.join("manifest.json");
    }
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

pub fn write_manifest(primary: &Path, manifest: &RunManifest) -> Result<PathBuf, Failure> {
    let path = manifest_path(primary);
    let json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&path, &json)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Failure::data(format!("{}: malformed manifest: {e}", path.display())))
}
