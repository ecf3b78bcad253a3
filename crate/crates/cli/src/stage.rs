//! Per-stage bookkeeping: resolved config, JSON-lines summary and a log.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::Settings;

pub const CONFIG_FILE: &str = "config.kv";
pub const SUMMARY_FILE: &str = "summary.jsonl";
pub const LOG_FILE: &str = "run.log";

/// Output directory of one command. Timestamps only ever reach the log.
pub struct Stage {
    pub name: &'static str,
    pub dir: PathBuf,
    lines: Vec<String>,
    log: File,
    started: Instant,
}

impl Stage {
    pub fn open(name: &'static str, settings: &Settings) -> Result<Self> {
        let dir = settings.out.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        settings.resolved().save(dir.join(CONFIG_FILE))?;
        let log_path = dir.join(LOG_FILE);
        let log = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
        let mut stage = Self {
            name,
            dir,
            lines: Vec::new(),
            log,
            started: Instant::now(),
        };
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        stage.log(&format!("start {name} at unix time {now}"));
        Ok(stage)
    }

    pub fn log(&mut self, msg: &str) {
        let _ = writeln!(self.log, "[{:>9.3}s] {msg}", self.started.elapsed().as_secs_f64());
    }

    /// Appends one summary record tagged with the stage name.
    pub fn record<T: Serialize>(&mut self, kind: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("stage".into(), self.name.into());
            map.insert("record".into(), kind.into());
        }
        self.lines.push(serde_json::to_string(&v)?);
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let path = self.dir.join(SUMMARY_FILE);
        let mut text = self.lines.join("\n");
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.log("done");
        Ok(path)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `path` relative to `root` when it lies below it.
pub fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}
