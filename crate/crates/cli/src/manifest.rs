use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

/// Record of one invocation, written once the run has finished.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub jobs: usize,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn begin(subcommand: &str, config: serde_json::Value, seed: u64, jobs: usize) -> Self {
        let now = stamp(Utc::now());
        RunManifest {
            subcommand: subcommand.to_string(),
            config,
            seed,
            jobs,
            version: concat!("memnorm ", env!("CARGO_PKG_VERSION")).to_string(),
            started: now.clone(),
            finished: now,
            outputs: Vec::new(),
        }
    }

    /// Stamps the end time and replaces `path` atomically.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished = stamp(Utc::now());
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .with_context(|| format!("creating a file in {}", dir.display()))?;
        serde_json::to_writer_pretty(&mut tmp, &self)?;
        writeln!(tmp)?;
        tmp.persist(path)
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("run manifest written to {}", path.display());
        Ok(())
    }
}
