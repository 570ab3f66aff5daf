//! Output files and the JSON manifest that accompanies them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{Command, RunConfig};
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub compute_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub timings: Timings,
    pub outputs: Vec<OutputEntry>,
    pub details: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files of one run and writes them with their manifest.
pub struct Writer {
    dir: PathBuf,
    command: Command,
    started: Instant,
    outputs: Vec<OutputEntry>,
}

impl Writer {
    pub fn new(dir: &Path, command: Command) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(self, config: &RunConfig, compute_seconds: f64, details: Value) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            command: self.command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            timings: Timings {
                compute_seconds,
                total_seconds: self.started.elapsed().as_secs_f64(),
            },
            outputs: self.outputs,
            details,
        };
        let path = self.dir.join(format!("{}.manifest.json", self.command.name()));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
