//! Per-stage run manifest listing every emitted file with its size and hash.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of `config.json` as written.
    pub config_sha256: String,
    pub inputs: Vec<String>,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    pub wall_clock_seconds: f64,
}

/// Output directory of one command; tracks files and timings for the manifest.
pub struct Stage {
    dir: PathBuf,
    command: String,
    files: Vec<PathBuf>,
    inputs: Vec<String>,
    timings: Vec<Timing>,
    started: Instant,
}

impl Stage {
    /// Create `dir`, which must be absent or empty unless `force` is set.
    pub fn open(dir: PathBuf, command: &str, force: bool) -> Result<Self> {
        if dir.exists() {
            let non_empty = fs::read_dir(&dir)
                .map_err(|e| CliError::io(&dir, e))?
                .next()
                .is_some();
            if non_empty {
                if !force {
                    return Err(CliError::OutputNotEmpty(dir));
                }
                fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            }
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            files: Vec::new(),
            inputs: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(rel);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.files.push(PathBuf::from(rel));
        Ok(())
    }

    /// Register files some other writer put under the stage directory.
    pub fn record(&mut self, rel: impl IntoIterator<Item = PathBuf>) {
        self.files.extend(rel);
    }

    pub fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push(Timing {
            step: step.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("{}: {step} took {:.2}s", self.command, t.elapsed().as_secs_f64());
        out
    }

    /// Write `config.json` and the manifest; returns the manifest.
    pub fn finish(mut self, config_json: &str) -> Result<RunManifest> {
        self.write(CONFIG_FILE, config_json)?;
        let mut files = Vec::with_capacity(self.files.len());
        let mut paths = self.files.clone();
        paths.sort();
        paths.dedup();
        for rel in paths {
            let path = self.dir.join(&rel);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            config_sha256: sha256_hex(config_json.as_bytes()),
            inputs: self.inputs.clone(),
            files,
            timings: self.timings.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
