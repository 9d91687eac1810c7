//! Per-stage manifests with content hashes, used to skip unchanged stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    /// Configuration sections the stage depends on.
    pub config: Value,
    pub inputs: Vec<FileHash>,
    /// Files written by the stage, relative to its directory.
    pub outputs: Vec<FileHash>,
    /// Hash over stage, version, config and input hashes.
    pub fingerprint: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if !(dir == root && e.file_name() == MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes of every file under `path` (or of `path` itself), sorted by path.
/// A directory's own manifest is excluded.
pub fn hash_tree(path: &Path) -> Result<Vec<FileHash>> {
    let files = if path.is_dir() {
        let mut v = Vec::new();
        walk(path, path, &mut v)?;
        v
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(path).ok().filter(|r| !r.as_os_str().is_empty()).unwrap_or(f);
            Ok(FileHash { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_file(f)? })
        })
        .collect()
}

/// Input hashes for a list of files or directories, each entry prefixed by
/// the path it was found under.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    let mut out = Vec::new();
    for p in paths {
        for h in hash_tree(p)? {
            let path = if p.is_dir() { format!("{}/{}", p.display(), h.path) } else { p.display().to_string() };
            out.push(FileHash { path, sha256: h.sha256 });
        }
    }
    Ok(out)
}

pub fn fingerprint(stage: &str, config: &Value, inputs: &[FileHash]) -> String {
    let hashes: Vec<&str> = inputs.iter().map(|h| h.sha256.as_str()).collect();
    let doc = serde_json::json!({ "stage": stage, "version": TOOL_VERSION, "config": config, "inputs": hashes });
    hex(&Sha256::digest(serde_json::to_vec(&doc).expect("json")))
}

impl RunManifest {
    pub fn read(dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Whether the files in `dir` still hash to the recorded outputs.
    pub fn outputs_intact(&self, dir: &Path) -> bool {
        hash_tree(dir).map(|h| h == self.outputs).unwrap_or(false)
    }
}
