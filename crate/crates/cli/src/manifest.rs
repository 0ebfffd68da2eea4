use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vsr_core::{Result, VsrError};

pub const MANIFEST_FILE: &str = "runs.jsonl";

/// One line of the append-only run log kept in every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub status: String,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            config: Value::Null,
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
            status: "ok".into(),
        }
    }

    /// Appends this record to `dir/runs.jsonl`.
    pub fn append(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let line = serde_json::to_string(self).map_err(|e| VsrError::io(&path, e))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| VsrError::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| VsrError::io(&path, e))
    }
}

pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| VsrError::io(&path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| VsrError::io(&path, e)))
        .collect()
}
