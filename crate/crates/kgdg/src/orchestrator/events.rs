//! Structured run log: one JSON object per line with stage, provenance and
//! category fields, appended to `run.log` in the output directory.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::generation::Provenance;

pub struct EventLog {
    writer: Option<std::io::BufWriter<std::fs::File>>,
}

impl EventLog {
    pub fn open(path: &std::path::Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(EventLog {
            writer: Some(std::io::BufWriter::new(file)),
        })
    }

    /// A log that drops everything, for callers that do not keep a run dir.
    pub fn disabled() -> Self {
        EventLog { writer: None }
    }

    pub fn emit(&mut self, event: &str, mut fields: Value) {
        let Some(writer) = self.writer.as_mut() else {
            return;
        };
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        if let Some(map) = fields.as_object_mut() {
            map.insert("event".to_string(), json!(event));
            map.insert("ts_ms".to_string(), json!(ts_ms));
        }
        let _ = writeln!(writer, "{fields}");
    }

    pub fn emit_record(&mut self, event: &str, stage: &str, provenance: &Provenance, extra: Value) {
        let mut fields = json!({
            "stage": stage,
            "document_id": provenance.document_id,
            "seed_id": provenance.seed_id,
            "task_id": provenance.task_id.get(),
            "domain": provenance.domain.as_str(),
            "draw_ordinal": provenance.draw_ordinal,
        });
        if let (Some(map), Some(extra)) = (fields.as_object_mut(), extra.as_object()) {
            for (k, v) in extra {
                map.insert(k.clone(), v.clone());
            }
        }
        self.emit(event, fields);
    }

    pub fn flush(&mut self) {
        if let Some(writer) = self.writer.as_mut() {
            let _ = writer.flush();
        }
    }
}
