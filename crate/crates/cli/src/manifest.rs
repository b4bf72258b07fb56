//! Run manifests: what a pipeline command consumed and produced.
//!
//! The run id is a SHA-256 over the command, the config snapshot, the input
//! hashes and the seeds, so identical runs get identical ids and identical
//! manifest bytes. Paths are stored relative to the data root.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Input name to hex SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Output name to path.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            run_id: String::new(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input_file(&mut self, name: impl Into<String>, path: &Path) -> Result<&mut Self> {
        self.inputs.insert(name.into(), sha256_file(path)?);
        Ok(self)
    }

    pub fn input_hash(&mut self, name: impl Into<String>, sha256: String) -> &mut Self {
        self.inputs.insert(name.into(), sha256);
        self
    }

    pub fn seed(&mut self, name: impl Into<String>, seed: u64) -> &mut Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    pub fn output(&mut self, name: impl Into<String>, path: impl Into<String>) -> &mut Self {
        self.outputs.insert(name.into(), path.into());
        self
    }

    /// Hash of everything that determines the run's results.
    pub fn compute_id(&self) -> String {
        let key = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seeds": self.seeds,
        });
        sha256_bytes(key.to_string().as_bytes())[..16].to_string()
    }

    pub fn finalize(mut self) -> Self {
        self.run_id = self.compute_id();
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::pipeline::read_json(path)
    }
}
