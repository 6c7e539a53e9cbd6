use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Describes a run before any result file is written; rewritten with the
/// wall-clock duration once the run finishes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub version: String,
    pub output_dir: PathBuf,
    pub wall_clock_s: Option<f64>,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            config_sha256: None,
            seed: None,
            mode: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            output_dir: output_dir.to_path_buf(),
            wall_clock_s: None,
        }
    }

    pub fn with_config(mut self, path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.config_path = Some(path.to_path_buf());
        self.config_sha256 = Some(format!("{:x}", hasher.finalize()));
        Ok(self)
    }

    /// Write the manifest; must happen before any result file.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text)
    }

    pub fn finalize(mut self, dir: &Path, started: Instant) -> std::io::Result<()> {
        self.wall_clock_s = Some(started.elapsed().as_secs_f64());
        self.write(dir)
    }
}
