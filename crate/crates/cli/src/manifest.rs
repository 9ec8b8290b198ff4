use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Content hash of the input data (see [`content_hash`]).
    pub data_hash: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: serde_json::Value::Null,
            data_hash: None,
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        self.write(path)
    }
}

/// Manifest location for an output: inside a directory, or beside a file.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_FILE)
    } else {
        let mut name = output
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Git-style hash: a file hashes as a blob; a directory hashes the sorted
/// `name blob-hash` lines of its regular files, skipping manifests.
pub fn content_hash(path: &Path) -> Result<String> {
    if !path.is_dir() {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        return Ok(blob_hash(&bytes));
    }
    let mut entries: Vec<(String, PathBuf)> = fs::read_dir(path)
        .with_context(|| format!("cannot list {}", path.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?.to_string();
            (!name.ends_with(MANIFEST_FILE)).then_some((name, p))
        })
        .collect();
    entries.sort();
    let mut tree = Sha256::new();
    for (name, p) in entries {
        let bytes = fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
        tree.update(format!("{name} {}\n", blob_hash(&bytes)).as_bytes());
    }
    Ok(hex::encode(tree.finalize()))
}

/// Hash over several named inputs: the sorted `name hash` lines of each part.
pub fn combined_hash(parts: &[(&str, &Path)]) -> Result<String> {
    let mut lines: Vec<String> = parts
        .iter()
        .map(|(name, p)| Ok(format!("{name} {}\n", content_hash(p)?)))
        .collect::<Result<_>>()?;
    lines.sort();
    Ok(hex::encode(Sha256::digest(lines.concat().as_bytes())))
}
