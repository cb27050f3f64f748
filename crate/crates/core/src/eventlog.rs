//! Line-delimited JSON event log.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::Seconds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Arrival,
    Offer,
    Interest,
    Declines,
    Grant,
    OfferExpire,
    MaterializeRefused,
    SubjobCreate,
    SubjobStart,
    SubjobEnd,
    Checkpoint,
    OomKill,
    FailureInject,
    Place,
    Preempt,
    MigrationDone,
    JobComplete,
    JobReject,
    ProfileRefresh,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub time: Seconds,
    pub seq: u64,
    pub kind: LogKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subjob: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offer: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice: Option<u32>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

impl LogRecord {
    pub fn new(time: Seconds, kind: LogKind) -> Self {
        LogRecord {
            time,
            seq: 0,
            kind,
            job: None,
            subjob: None,
            offer: None,
            slice: None,
            payload: Value::Null,
        }
    }

    pub fn job(mut self, id: impl Into<String>) -> Self {
        self.job = Some(id.into());
        self
    }

    pub fn subjob(mut self, id: u64) -> Self {
        self.subjob = Some(id);
        self
    }

    pub fn offer(mut self, id: u64) -> Self {
        self.offer = Some(id);
        self
    }

    pub fn slice(mut self, id: u32) -> Self {
        self.slice = Some(id);
        self
    }

    pub fn payload(mut self, v: Value) -> Self {
        self.payload = v;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, assigning the next sequence number.
    pub fn push(&mut self, mut r: LogRecord) {
        r.seq = self.records.len() as u64;
        self.records.push(r);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: LogKind) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn records_serialize_compactly_in_order() {
        let mut log = EventLog::new();
        log.push(LogRecord::new(0.0, LogKind::Arrival).job("a"));
        log.push(
            LogRecord::new(1.5, LogKind::Grant)
                .job("a")
                .offer(3)
                .payload(json!({"cost": 2.0, "b": 1})),
        );
        let text = log.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"time":0.0,"seq":0,"kind":"arrival","job":"a"}"#
        );
        assert_eq!(
            lines[1],
            r#"{"time":1.5,"seq":1,"kind":"grant","job":"a","offer":3,"payload":{"b":1,"cost":2.0}}"#
        );
        assert_eq!(log.of_kind(LogKind::Grant).count(), 1);
    }
}
