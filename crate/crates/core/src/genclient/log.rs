use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde_json::{json, Value};

/// Append-only JSONL log of every request and response. Data-URI payloads
/// are replaced by their length before writing.
#[derive(Debug)]
pub struct RunLog {
    out: Mutex<BufWriter<File>>,
}

impl RunLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn record(&self, event: &str, attempt: u32, payload: Value) {
        let line = json!({
            "ts": chrono::Utc::now().to_rfc3339(),
            "event": event,
            "attempt": attempt,
            "payload": elide_images(payload),
        });
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        // A failing log must not fail the generation it describes.
        if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
            log::warn!("failed to write request log entry");
        }
    }
}

pub(crate) fn elide_images(v: Value) -> Value {
    match v {
        Value::String(s) if s.starts_with("data:") => {
            let head = s.split(',').next().unwrap_or("data:");
            Value::String(format!("{head},<elided {} bytes>", s.len()))
        }
        Value::Array(items) => Value::Array(items.into_iter().map(elide_images).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, elide_images(v))).collect()),
        other => other,
    }
}
