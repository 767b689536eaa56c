use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{io_failure, Failure};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: enough to rerun it and to check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_time_s: f64,
    pub version: &'static str,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io_failure(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn artifacts(paths: &[PathBuf]) -> Result<Vec<Artifact>, Failure> {
    paths
        .iter()
        .map(|p| Ok(Artifact { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

pub struct Recorder {
    command: &'static str,
    flags: serde_json::Value,
    started: Instant,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new<F: Serialize>(command: &'static str, flags: &F) -> Self {
        Recorder {
            command,
            flags: serde_json::to_value(flags).unwrap_or(serde_json::Value::Null),
            started: Instant::now(),
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(self, path: &Path) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            flags: self.flags,
            seeds: self.seeds,
            inputs: artifacts(&self.inputs)?,
            outputs: artifacts(&self.outputs)?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION"),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
    }
}

/// Manifest location for an output file (`x.json` → `x.manifest.json`) or
/// directory (`dir/manifest.json`).
pub fn manifest_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("manifest.json");
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.manifest.json"))
}
