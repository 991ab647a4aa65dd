//! Run manifests: every command that writes artifacts also records what it
//! ran with, so any output is reproducible from its manifest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub timestamp_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileStamp>,
    pub outputs: Vec<FileStamp>,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            master_seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(stamp(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(stamp(path)?);
        Ok(())
    }

    /// Write the manifest next to the artifacts: `<dir>/manifest.json` for a
    /// directory target, `<file>.manifest.json` otherwise.
    pub fn write(&self, target: &Path) -> anyhow::Result<PathBuf> {
        let path = if target.is_dir() {
            target.join("manifest.json")
        } else {
            let mut name = target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            name.push_str(".manifest.json");
            target.with_file_name(name)
        };
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = fs::File::open(path)
        .map_err(|e| anyhow::anyhow!("cannot open {} for hashing: {e}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn stamp(path: &Path) -> anyhow::Result<FileStamp> {
    Ok(FileStamp {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}
