//! Run manifests and cleanup of partial outputs.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use tusvol_core::{Error, Result};

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    config: &'a C,
    inputs: &'a [String],
    outputs: &'a [String],
    started_unix_ms: u128,
    duration_seconds: f64,
}

/// Tracks a command run: registered outputs are deleted again if the command
/// fails, and exactly one `manifest.json` lands next to the outputs on
/// success. Wall-clock facts exist only in the manifest.
pub struct Run {
    command: &'static str,
    seed: u64,
    started: Instant,
    started_unix_ms: u128,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
    manifest_dir: PathBuf,
}

impl Run {
    pub fn new(command: &'static str, seed: u64, manifest_dir: &Path) -> Run {
        Run {
            command,
            seed,
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest_dir: manifest_dir.to_path_buf(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    /// Registers an output that must be cleaned up on failure.
    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Runs the body; on failure removes every registered output, on success
    /// writes the manifest.
    pub fn execute<C: Serialize>(mut self, config: &C, body: impl FnOnce(&mut Run) -> Result<()>) -> Result<()> {
        match body(&mut self) {
            Ok(()) => self.finish(config),
            Err(e) => {
                for path in self.outputs.iter().rev() {
                    if path.is_dir() {
                        let _ = std::fs::remove_dir_all(path);
                    } else {
                        let _ = std::fs::remove_file(path);
                    }
                }
                Err(e)
            }
        }
    }

    fn finish<C: Serialize>(self, config: &C) -> Result<()> {
        let outputs: Vec<String> = self.outputs.iter().map(|p| p.display().to_string()).collect();
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config,
            inputs: &self.inputs,
            outputs: &outputs,
            started_unix_ms: self.started_unix_ms,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.manifest_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::create_dir_all(&self.manifest_dir)
            .map_err(|e| Error::io(self.manifest_dir.display().to_string(), e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
