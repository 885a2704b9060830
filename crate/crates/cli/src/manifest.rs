use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use kgsym::data::TripleFormat;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(FileDigest {
            path: path.to_owned(),
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

/// Files that make up a dataset directory in `format`.
pub fn dataset_files(dir: &Path, format: TripleFormat) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = format
        .split_file_names()
        .iter()
        .map(|name| dir.join(name))
        .collect();
    if format == TripleFormat::Ids {
        files.push(dir.join("entity2id.txt"));
        files.push(dir.join("relation2id.txt"));
    }
    files
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Unix seconds; omitted in deterministic mode.
    pub started: Option<u64>,
    pub finished: Option<u64>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: Option<u64>, deterministic: bool) -> Self {
        RunManifest {
            command: std::env::args().collect(),
            version: concat!("kgsym ", env!("CARGO_PKG_VERSION")).to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: (!deterministic).then(unix_now),
            finished: None,
        }
    }

    pub fn add_inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for path in paths {
            if path.exists() {
                self.inputs.push(FileDigest::of(path)?);
            }
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        if self.started.is_some() {
            self.finished = Some(unix_now());
        }
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
