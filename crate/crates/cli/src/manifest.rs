use std::fs;
use std::path::{Path, PathBuf};

use normsample::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command: its name, the fully resolved
/// configuration and the hashes of what it wrote.
#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hashes `files` (paths inside `out`) and writes `out/manifest.json`.
pub fn write<C: Serialize>(
    out: &Path,
    command: &'static str,
    seed: u64,
    config: C,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let mut artifacts = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(out).unwrap_or(f);
        artifacts.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&fs::read(f)?),
        });
    }
    let manifest = Manifest {
        tool: "normsample",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        artifacts,
    };
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
