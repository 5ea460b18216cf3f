//! Run-directory files: checkpoints and the metrics CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::train::{MetricsRow, Trainer};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Complete training state plus the number of metrics rows already written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub format_version: u32,
    pub metrics_rows: usize,
    pub trainer: Trainer<S>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(trainer: Trainer<S>, metrics_rows: usize) -> Self {
        Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, metrics_rows, trainer }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse {
                context: "checkpoint".into(),
                message: format!("unsupported format version {}", c.format_version),
            });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse { context: path.display().to_string(), message: j.to_string() },
            other => other,
        })
    }
}

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// truncated file under `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(run_dir: &Path, update: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("update-{update:06}.json"))
}

/// Checkpoints in `run_dir`, ordered by update index.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let update = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("update-"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(u) = update {
            out.push((u, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    list_checkpoints(run_dir)?
        .pop()
        .map(|(_, p)| p)
        .ok_or_else(|| Error::config(format!("no checkpoint in {}", run_dir.join(CHECKPOINT_DIR).display())))
}

/// Removes all but the newest `keep` checkpoints.
pub fn prune_checkpoints(run_dir: &Path, keep: usize) -> Result<()> {
    let all = list_checkpoints(run_dir)?;
    let excess = all.len().saturating_sub(keep.max(1));
    for (_, path) in &all[..excess] {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Appends metrics rows to a CSV file, writing the header once.
pub struct MetricsWriter {
    writer: csv::Writer<fs::File>,
    rows: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { writer: csv::Writer::from_writer(file), rows: 0 })
    }

    /// Reopens `path` keeping its first `keep` rows.
    pub fn resume(path: &Path, keep: usize) -> Result<Self> {
        let rows = read_metrics(path)?;
        if rows.len() < keep {
            return Err(Error::contract(format!(
                "{} has {} rows, checkpoint expects {keep}",
                path.display(),
                rows.len()
            )));
        }
        let mut w = Self::create(path)?;
        for row in &rows[..keep] {
            w.write(row)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| Error::io("metrics", e))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
