//! The per-day event knowledge base: records, retrieval, maintenance
//! buffers, and JSON snapshots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, Embedding};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Upper bound on keywords stored per event.
pub const MAX_KEYWORDS: usize = 10;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("corrupt snapshot {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("snapshot io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Text sent to the encoder for an event: `"{name}: {kw1}, {kw2}, ..."`.
pub fn event_encoding_text(name: &str, keywords: &[String]) -> String {
    format!("{name}: {}", keywords.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub name: String,
    pub keywords: Vec<String>,
    pub embedding: Embedding,
    pub created_at_block: usize,
    pub refresh_count: u32,
}

/// One aggregated text assigned to an event, with the message ids it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferedText {
    pub text: String,
    #[serde(default)]
    pub message_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    #[serde(flatten)]
    record: EventRecord,
    #[serde(default)]
    buffer: Vec<BufferedText>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub name: String,
    pub score: f64,
}

/// Produces refreshed keywords and embedding for an event from its buffer.
pub trait Refresher {
    fn refresh(
        &self,
        name: &str,
        buffered: &[BufferedText],
    ) -> Result<(Vec<String>, Embedding), String>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaintenanceReport {
    pub refreshed: Vec<String>,
    /// Events whose refresh failed, with the reason; their state is unchanged.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    block: usize,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    schema_version: u32,
    block: usize,
    events: Vec<Entry>,
}

impl KnowledgeBase {
    /// A fresh, empty knowledge base for one block.
    pub fn new(block: usize) -> Self {
        Self {
            block,
            entries: Vec::new(),
        }
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records in insertion order.
    pub fn records(&self) -> impl Iterator<Item = &EventRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    pub fn get(&self, name: &str) -> Option<&EventRecord> {
        self.position(name).map(|i| &self.entries[i].record)
    }

    pub fn buffer(&self, name: &str) -> Option<&[BufferedText]> {
        self.position(name)
            .map(|i| self.entries[i].buffer.as_slice())
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.record.name == name)
    }

    /// Store a new event with an empty buffer and return its final name.
    /// A name already present gets a ` (n)` suffix.
    pub fn insert_event(&mut self, mut record: EventRecord) -> String {
        if self.position(&record.name).is_some() {
            let base = record.name.clone();
            let mut n = 2;
            while self.position(&format!("{base} ({n})")).is_some() {
                n += 1;
            }
            record.name = format!("{base} ({n})");
            log::warn!(
                "event name `{base}` already present; stored as `{}`",
                record.name
            );
        }
        let name = record.name.clone();
        self.entries.push(Entry {
            record,
            buffer: Vec::new(),
        });
        name
    }

    /// Events with similarity at least `gamma`, best first, at most `q`.
    /// Ties keep insertion order.
    pub fn retrieve(&self, query: &Embedding, q: usize, gamma: f64) -> Vec<RetrievalHit> {
        let mut hits: Vec<RetrievalHit> = self
            .entries
            .iter()
            .filter_map(|e| {
                let score = cosine(query, &e.record.embedding).ok()?;
                (score >= gamma).then(|| RetrievalHit {
                    name: e.record.name.clone(),
                    score,
                })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score));
        hits.truncate(q);
        hits
    }

    pub fn buffer_message(&mut self, name: &str, text: BufferedText) -> Result<usize, KbError> {
        let i = self
            .position(name)
            .ok_or_else(|| KbError::UnknownEvent(name.to_string()))?;
        self.entries[i].buffer.push(text);
        Ok(self.entries[i].buffer.len())
    }

    /// Refresh every event whose buffer holds at least `theta` texts.
    /// Names never change; a failed refresh leaves the event untouched.
    pub fn maintain(&mut self, theta: usize, refresher: &dyn Refresher) -> MaintenanceReport {
        let mut report = MaintenanceReport::default();
        for entry in &mut self.entries {
            if entry.buffer.len() < theta {
                continue;
            }
            match refresher.refresh(&entry.record.name, &entry.buffer) {
                Ok((keywords, embedding)) => {
                    entry.record.keywords = keywords;
                    entry.record.embedding = embedding;
                    entry.record.refresh_count += 1;
                    entry.buffer.clear();
                    report.refreshed.push(entry.record.name.clone());
                }
                Err(reason) => {
                    log::warn!("refresh of `{}` failed: {reason}", entry.record.name);
                    report.failures.push((entry.record.name.clone(), reason));
                }
            }
        }
        report
    }

    pub fn to_json(&self) -> String {
        let doc = SnapshotDoc {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            block: self.block,
            events: self.entries.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("snapshot serializes")
    }

    pub fn from_json(s: &str, origin: &str) -> Result<Self, KbError> {
        let value: serde_json::Value = serde_json::from_str(s).map_err(|e| KbError::Corrupt {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| KbError::Corrupt {
                path: origin.to_string(),
                reason: "missing schema_version".to_string(),
            })?;
        if found != u64::from(SNAPSHOT_SCHEMA_VERSION) {
            return Err(KbError::SchemaVersion {
                found: found as u32,
                expected: SNAPSHOT_SCHEMA_VERSION,
            });
        }
        let doc: SnapshotDoc = serde_json::from_value(value).map_err(|e| KbError::Corrupt {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            block: doc.block,
            entries: doc.events,
        })
    }

    /// Write atomically (temp file then rename).
    pub fn snapshot(&self, path: &Path) -> Result<(), KbError> {
        let io = |source| KbError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, KbError> {
        let s = fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn record(name: &str, v: &[f64]) -> EventRecord {
        EventRecord {
            name: name.to_string(),
            keywords: vec![name.to_lowercase()],
            embedding: e(v),
            created_at_block: 1,
            refresh_count: 0,
        }
    }

    fn text(s: &str) -> BufferedText {
        BufferedText {
            text: s.to_string(),
            message_ids: vec![format!("id-{s}")],
        }
    }

    struct FixedRefresher {
        fail: bool,
        calls: Cell<usize>,
    }

    impl Refresher for FixedRefresher {
        fn refresh(
            &self,
            name: &str,
            buffered: &[BufferedText],
        ) -> Result<(Vec<String>, Embedding), String> {
            self.calls.set(self.calls.get() + 1);
            if self.fail {
                return Err("evaluator offline".into());
            }
            let kw = vec![format!("kw{}", buffered.len())];
            assert!(!name.is_empty());
            Ok((kw, e(&[0.0, 1.0])))
        }
    }

    #[test]
    fn insert_and_disambiguate() {
        let mut kb = KnowledgeBase::new(1);
        assert_eq!(kb.insert_event(record("X", &[1.0, 0.0])), "X");
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.insert_event(record("Y", &[0.0, 1.0])), "Y");
        assert_eq!(kb.insert_event(record("X", &[1.0, 1.0])), "X (2)");
        assert_eq!(kb.insert_event(record("X", &[1.0, 1.0])), "X (3)");
        assert!(kb.get("X").is_some() && kb.get("Y").is_some() && kb.get("X (2)").is_some());
        assert_eq!(kb.buffer("X (2)").unwrap().len(), 0);
    }

    #[test]
    fn retrieval_examples() {
        let mut kb = KnowledgeBase::new(1);
        assert!(kb.retrieve(&e(&[1.0, 0.0]), 8, 0.0).is_empty());
        kb.insert_event(record("e1", &[1.0, 0.0]));
        kb.insert_event(record("e2", &[0.0, 1.0]));
        kb.insert_event(record("e3", &[0.6, 0.8]));
        let hits = kb.retrieve(&e(&[1.0, 0.0]), 2, 0.0);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].name, "e1");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].name, "e3");
        assert!((hits[1].score - 0.6).abs() < 1e-12);
        assert!(kb.retrieve(&e(&[0.3, 0.1]), 8, 0.99).is_empty());
    }

    #[test]
    fn buffer_unknown_event_fails() {
        let mut kb = KnowledgeBase::new(1);
        assert!(matches!(
            kb.buffer_message("nope", text("a")),
            Err(KbError::UnknownEvent(_))
        ));
        kb.insert_event(record("X", &[1.0, 0.0]));
        assert_eq!(kb.buffer_message("X", text("a")).unwrap(), 1);
    }

    #[test]
    fn maintenance_threshold_semantics() {
        let mut kb = KnowledgeBase::new(1);
        kb.insert_event(record("X", &[1.0, 0.0]));
        kb.insert_event(record("Y", &[1.0, 1.0]));
        let r = FixedRefresher {
            fail: false,
            calls: Cell::new(0),
        };
        for i in 0..9 {
            kb.buffer_message("X", text(&i.to_string())).unwrap();
        }
        assert!(kb.maintain(10, &r).refreshed.is_empty());
        kb.buffer_message("X", text("9")).unwrap();
        for i in 0..12 {
            kb.buffer_message("Y", text(&i.to_string())).unwrap();
        }
        let report = kb.maintain(10, &r);
        assert_eq!(report.refreshed, vec!["X", "Y"]);
        assert_eq!(r.calls.get(), 2);
        let x = kb.get("X").unwrap();
        assert_eq!(x.name, "X");
        assert_eq!(x.keywords, vec!["kw10"]);
        assert_eq!(x.refresh_count, 1);
        assert_eq!(kb.buffer("X").unwrap().len(), 0);
        assert_eq!(kb.get("Y").unwrap().keywords, vec!["kw12"]);
    }

    #[test]
    fn failed_refresh_is_atomic() {
        let mut kb = KnowledgeBase::new(1);
        kb.insert_event(record("X", &[1.0, 0.0]));
        for i in 0..10 {
            kb.buffer_message("X", text(&i.to_string())).unwrap();
        }
        let before = kb.clone();
        let report = kb.maintain(
            10,
            &FixedRefresher {
                fail: true,
                calls: Cell::new(0),
            },
        );
        assert_eq!(report.failures.len(), 1);
        assert_eq!(kb, before);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let empty = KnowledgeBase::new(4);
        let p = dir.path().join("empty.json");
        empty.snapshot(&p).unwrap();
        assert_eq!(KnowledgeBase::load_snapshot(&p).unwrap(), empty);

        let mut kb = KnowledgeBase::new(2);
        kb.insert_event(record("a", &[0.1, 0.7]));
        kb.insert_event(record("b", &[1.0 / 3.0, 2.0f64.sqrt()]));
        kb.insert_event(record("c", &[-0.25, 1e-17]));
        kb.buffer_message("b", text("pending")).unwrap();
        let p = dir.path().join("kb.json");
        kb.snapshot(&p).unwrap();
        assert_eq!(KnowledgeBase::load_snapshot(&p).unwrap(), kb);
    }

    #[test]
    fn corrupt_and_versioned_snapshots_rejected() {
        assert!(matches!(
            KnowledgeBase::from_json("{\"schema_version\":1,\"block\":", "x"),
            Err(KbError::Corrupt { .. })
        ));
        assert!(matches!(
            KnowledgeBase::from_json("{\"schema_version\":99,\"block\":1,\"events\":[]}", "x"),
            Err(KbError::SchemaVersion { found: 99, .. })
        ));
        assert!(matches!(
            KnowledgeBase::from_json(
                "{\"schema_version\":1,\"block\":1,\"events\":[{\"name\":\"x\"}]}",
                "x"
            ),
            Err(KbError::Corrupt { .. })
        ));
    }

    #[test]
    fn snapshot_fields_match_documented_layout() {
        let mut kb = KnowledgeBase::new(3);
        kb.insert_event(record("a", &[1.0, 0.0]));
        let v: serde_json::Value = serde_json::from_str(&kb.to_json()).unwrap();
        assert_eq!(v["block"], 3);
        assert_eq!(v["schema_version"], 1);
        let ev = &v["events"][0];
        for key in [
            "name",
            "keywords",
            "embedding",
            "created_at_block",
            "refresh_count",
        ] {
            assert!(ev.get(key).is_some(), "missing {key}");
        }
    }
}
