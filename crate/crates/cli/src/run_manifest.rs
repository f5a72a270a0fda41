use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use counterfact_ingest::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Record of one command invocation, written when the command finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file.
    pub outputs: BTreeMap<String, String>,
    pub elapsed_ms: u64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs while a command runs.
pub struct RunRecorder {
    started: Instant,
    command: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            started: Instant::now(),
            command,
            seed: 0,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Write `contents` atomically and record it as an output.
    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        write_atomic(path, contents)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(self, path: &Path) -> Result<RunManifest, CliError> {
        let hash_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
            paths.iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
        };
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            seed: self.seed,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Output files whose current hash differs from the recorded one.
    pub fn changed_outputs(&self) -> Result<Vec<String>, CliError> {
        let mut changed = Vec::new();
        for (path, hash) in &self.outputs {
            if &sha256_file(Path::new(path))? != hash {
                changed.push(path.clone());
            }
        }
        Ok(changed)
    }
}
