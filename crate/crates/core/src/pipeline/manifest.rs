//! Run manifests and the per-record journal that backs them.
//!
//! The manifest (`<output>.manifest.json`) holds run identity and per-item
//! status. Completed records are appended to `<output>.journal.jsonl` as
//! they finish; the manifest itself is rewritten periodically and at the end
//! of a run. On resume the journal is authoritative for completed items.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preference,
    Infused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Done,
    Skipped { class: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub key: String,
    #[serde(flatten)]
    pub status: ItemStatus,
    /// Stage-1 branch coin for this item, recorded for auditing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_coin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub done: usize,
    pub skipped: usize,
    pub pending: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_branch: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    pub stage: Stage,
    pub master_seed: u64,
    pub config_digest: String,
    /// Canonical behavior-affecting configuration, kept for mismatch diffs.
    pub config: Value,
    pub inputs_digest: String,
    pub items: Vec<ItemEntry>,
    #[serde(default)]
    pub ingest_warnings: Vec<IngestWarning>,
    pub counts: RunCounts,
}

impl RunManifest {
    pub fn recount(&mut self) {
        let mut c = RunCounts {
            total: self.items.len(),
            ..RunCounts::default()
        };
        for item in &self.items {
            match item.status {
                ItemStatus::Pending => c.pending += 1,
                ItemStatus::Done => {
                    c.done += 1;
                    if let Some(b) = &item.branch {
                        *c.per_branch.entry(b.clone()).or_default() += 1;
                    }
                }
                ItemStatus::Skipped { .. } => c.skipped += 1,
            }
        }
        self.counts = c;
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))
    }

    /// Atomic write through a temporary sibling.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = sibling(path, ".tmp");
        let mut data = serde_json::to_vec_pretty(self).expect("manifest is serializable");
        data.push(b'\n');
        std::fs::write(&tmp, data).map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
    }

    pub fn skip_rate(&self) -> f64 {
        if self.items.is_empty() {
            0.0
        } else {
            self.counts.skipped as f64 / self.items.len() as f64
        }
    }
}

/// Keys whose values differ between two canonical configs, as dotted paths.
pub fn config_diff(old: &Value, new: &Value) -> Vec<String> {
    fn walk(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(va), Some(vb)) => walk(&path, va, vb, out),
                        (va, vb) => out.push(format!("{path}: {} -> {}", show(va), show(vb))),
                    }
                }
            }
            _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
            _ => {}
        }
    }
    fn show(v: Option<&Value>) -> String {
        v.map_or_else(|| "<absent>".to_string(), Value::to_string)
    }
    let mut out = Vec::new();
    walk("", old, new, &mut out);
    out
}

pub fn manifest_path(output: &Path) -> PathBuf {
    sibling(output, ".manifest.json")
}

pub fn journal_path(output: &Path) -> PathBuf {
    sibling(output, ".journal.jsonl")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
struct JournalLine<T> {
    index: usize,
    key: String,
    record: T,
}

pub(crate) struct Journal {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Journal {
    pub fn create(path: &Path, truncate: bool) -> Result<Self, PipelineError> {
        let file = if truncate {
            File::create(path)
        } else {
            OpenOptions::new().create(true).append(true).open(path)
        }
        .map_err(|e| PipelineError::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append<T: Serialize>(&mut self, index: usize, key: &str, record: &T) -> Result<(), PipelineError> {
        let line = JournalLine {
            index,
            key: key.to_string(),
            record,
        };
        serde_json::to_writer(&mut self.out, &line).expect("record is serializable");
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| PipelineError::io(&self.path, e))
    }
}

/// Completed records by item index. A torn final line from an interrupted
/// write is ignored.
pub(crate) fn read_journal<T: DeserializeOwned>(
    path: &Path,
    keys: &[String],
) -> Result<BTreeMap<usize, T>, PipelineError> {
    let mut out = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        let Ok(entry) = serde_json::from_str::<JournalLine<T>>(&line) else {
            log::warn!("ignoring unreadable journal line in {}", path.display());
            continue;
        };
        if keys.get(entry.index) != Some(&entry.key) {
            return Err(PipelineError::Manifest(format!(
                "journal entry {} (`{}`) does not match the current inputs",
                entry.index, entry.key
            )));
        }
        out.insert(entry.index, entry.record);
    }
    Ok(out)
}
