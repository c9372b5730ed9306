use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the resolved configuration. serde_json maps are key-sorted, so
/// the serialized form is canonical.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(serde_json::to_string(config).expect("json").as_bytes())
}

/// Provenance record written beside every run's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: Value,
    pub seeds: Value,
    pub versions: Value,
    pub outputs: Vec<OutputDigest>,
    pub started_unix: u64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub struct RunRecorder {
    command: String,
    config: Value,
    seeds: Value,
    started: Instant,
    started_unix: u64,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn new(command: &str, config: Value, seeds: Value) -> Self {
        RunRecorder {
            command: command.into(),
            config,
            seeds,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes the manifest to `dest`, digesting every recorded output.
    pub fn finish(self, dest: &Path) -> Result<Manifest, CliError> {
        let mut outputs = Vec::new();
        for p in &self.outputs {
            let bytes = std::fs::read(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            outputs.push(OutputDigest {
                path: p.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let m = Manifest {
            command: self.command,
            config_hash: config_hash(&self.config),
            config: self.config,
            seeds: self.seeds,
            versions: json!({
                "gridmind": env!("CARGO_PKG_VERSION"),
                "manifest_format": 1,
            }),
            outputs,
            started_unix: self.started_unix,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        crate::write_file(dest, text.as_bytes())?;
        Ok(m)
    }
}

/// `out.jsonl` → `out.jsonl.manifest.json`; directories get `manifest.json`.
pub fn manifest_for(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}
