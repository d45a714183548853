//! Run records: one JSON log per command invocation, written under
//! `<out>/run_records/`. Records carry wall-clock timestamps and are logs,
//! not artifacts — byte-for-byte determinism claims cover everything
//! outside that directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{store, AppResult};

pub const RUN_RECORD_DIR: &str = "run_records";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub command: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<String>,
    pub metrics: serde_json::Value,
}

pub struct RunLogger {
    record: RunRecord,
    out_dir: PathBuf,
}

impl RunLogger {
    pub fn start(out_dir: &Path, command: &str, config_hash: &str) -> Self {
        RunLogger {
            record: RunRecord {
                config_hash: config_hash.to_string(),
                command: command.to_string(),
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
                artifacts: Vec::new(),
                metrics: serde_json::Value::Null,
            },
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn artifact(&mut self, path: &Path) {
        self.record.artifacts.push(path.display().to_string());
    }

    pub fn metrics(&mut self, metrics: serde_json::Value) {
        self.record.metrics = metrics;
    }

    pub fn finish(mut self) -> AppResult<()> {
        self.record.finished_unix_ms = now_ms();
        let dir = self.out_dir.join(RUN_RECORD_DIR);
        store::ensure_dir(&dir)?;
        let short = &self.record.config_hash[..self.record.config_hash.len().min(12)];
        let path = dir.join(format!("{}-{short}.json", self.record.command));
        std::fs::write(path, serde_json::to_string_pretty(&self.record)? + "\n")?;
        Ok(())
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
