//! Run manifests: written last, so a manifest on disk certifies that every
//! listed output exists and the run completed.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fredlab::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub subcommand: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
    pub seeds: Vec<u64>,
}

pub struct ManifestBuilder {
    subcommand: String,
    config_hash: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, config_bytes: &[u8]) -> ManifestBuilder {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            config_hash: format!("{:016x}", fnv64(config_bytes)),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn seed(&mut self, s: u64) {
        self.seeds.push(s);
    }

    /// Verify outputs exist, then write the manifest as the final artifact.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        for out in &self.outputs {
            if !out.exists() {
                return Err(Error::MissingArtifact(out.clone()));
            }
        }
        let manifest = RunManifest {
            config_hash: self.config_hash,
            subcommand: self.subcommand.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            seeds: self.seeds,
        };
        let path = dir.join(format!("manifest-{}.json", self.subcommand));
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
