//! `manifest.json`: what a run read, how it was configured and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use geotopic::io;

use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Every flag after defaults are applied, except ones that cannot
    /// change outputs (`--threads`, verbosity).
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    /// Written files, relative to the output directory.
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    /// 0 unless `--timing` was given.
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            wall_seconds: 0.0,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let digest = digest_path(path)?;
        self.inputs.insert(
            name.to_string(),
            InputDigest {
                path: path.display().to_string(),
                sha256: digest,
            },
        );
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn write(&mut self, dir: &Path) -> Result<()> {
        self.outputs.sort();
        self.outputs.dedup();
        io::write_json(&dir.join(MANIFEST_FILE), self)?;
        Ok(())
    }
}

/// SHA-256 of a file, or for a directory of its files' relative paths and
/// digests in sorted order. Manifests inside the tree are skipped.
pub fn digest_path(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).map_err(|e| geotopic::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| geotopic::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        return Ok(format!("{:x}", Sha256::digest(&bytes)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let d = digest_path(&path.join(&rel))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update(b"\0");
        hasher.update(d.as_bytes());
        hasher.update(b"\n");
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| geotopic::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| geotopic::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}

/// Files under `dir`, relative and sorted, excluding the manifest itself.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut names: Vec<String> = files.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    names.sort();
    Ok(names)
}
