use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fives_core::Result;
use serde::Serialize;

/// Record of one command run, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at: now(),
            finished_at: 0.0,
        }
    }

    /// Writes the manifest to `path` through a temporary file and a rename.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Manifest location for a command whose output is `out`: inside it when it
/// is a directory, otherwise beside it as `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}
