//! Line-delimited JSON records: evaluation metrics and fixture manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use palette_core::tasks::TaskMeta;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub checkpoint: String,
    pub step: u64,
    /// `ema` or `raw`.
    pub params: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub count: usize,
    pub seed: u64,
}

/// One frozen evaluation example. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub id: String,
    pub target: String,
    pub input: String,
    pub mask: String,
    /// Class label of the target, when the source has labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub meta: TaskMeta,
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::At { path: path.to_path_buf(), message: format!("line {}: {e}", i + 1) })?);
    }
    Ok(out)
}

/// Fixed-width text table of metric records, one row per task and metric.
pub fn metric_table(records: &[MetricRecord]) -> String {
    let mut out = format!("{:<16} {:<22} {:>12} {:>7}\n", "task", "metric", "value", "n");
    for r in records {
        out.push_str(&format!("{:<16} {:<22} {:>12.5} {:>7}\n", r.task, r.metric, r.value, r.count));
    }
    out
}
