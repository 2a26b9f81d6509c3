//! Messages, day-sliced message blocks, and dataset ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset contains no messages")]
    Empty,
    #[error("unknown dataset format `{0}` (expected jsonl or tsv)")]
    UnknownFormat(String),
}

/// A single social post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub text: String,
    pub timestamp: Option<DateTime<Utc>>,
    /// Ground truth, read only by evaluation.
    pub gold_label: Option<String>,
}

/// All messages of one day, in ingestion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageBlock {
    /// 1-based, contiguous across a dataset.
    pub index: usize,
    /// Calendar day (UTC) when blocks were derived from timestamps.
    pub day: Option<NaiveDate>,
    pub messages: Vec<Message>,
}

impl MessageBlock {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.messages.iter().map(|m| m.text.as_str()).collect()
    }
}

/// Name of a detected (or gold) event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EventLabel(String);

impl EventLabel {
    pub fn new(value: impl Into<String>) -> Option<Self> {
        let value = value.into();
        if value.trim().is_empty() {
            None
        } else {
            Some(Self(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EventLabel {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| "event label must be non-empty".to_string())
    }
}

impl From<EventLabel> for String {
    fn from(label: EventLabel) -> Self {
        label.0
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Tsv,
}

impl DatasetFormat {
    /// Guess from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => DatasetFormat::Tsv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DatasetFormat::Jsonl),
            "tsv" => Ok(DatasetFormat::Tsv),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct JsonRecord {
    id: String,
    text: String,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    block: Option<i64>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum BlockKey {
    Day(NaiveDate),
    Explicit(i64),
}

struct Row {
    line: usize,
    message: Message,
    key: BlockKey,
}

fn malformed(line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn parse_timestamp(line: usize, raw: &str) -> Result<DateTime<Utc>, DatasetError> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| malformed(line, format!("invalid RFC 3339 timestamp `{raw}`: {e}")))
}

fn build_row(
    line: usize,
    id: String,
    text: String,
    timestamp: Option<&str>,
    block: Option<i64>,
    label: Option<String>,
) -> Result<Row, DatasetError> {
    if id.trim().is_empty() {
        return Err(malformed(line, "empty id"));
    }
    if text.trim().is_empty() {
        return Err(malformed(line, "empty text"));
    }
    let (timestamp, key) = match (timestamp, block) {
        (Some(raw), _) => {
            let ts = parse_timestamp(line, raw)?;
            (Some(ts), BlockKey::Day(ts.date_naive()))
        }
        (None, Some(b)) => (None, BlockKey::Explicit(b)),
        (None, None) => return Err(malformed(line, "neither `timestamp` nor `block` present")),
    };
    let gold_label = label.filter(|l| !l.trim().is_empty());
    Ok(Row {
        line,
        message: Message {
            id,
            text,
            timestamp,
            gold_label,
        },
        key,
    })
}

fn parse_jsonl_line(line: usize, raw: &str) -> Result<Row, DatasetError> {
    let rec: JsonRecord =
        serde_json::from_str(raw).map_err(|e| malformed(line, format!("invalid JSON: {e}")))?;
    build_row(
        line,
        rec.id,
        rec.text,
        rec.timestamp.as_deref(),
        rec.block,
        rec.label,
    )
}

/// Columns: id, text, timestamp-or-block, optional label.
fn parse_tsv_line(line: usize, raw: &str) -> Result<Row, DatasetError> {
    let cols: Vec<&str> = raw.split('\t').collect();
    if cols.len() < 3 || cols.len() > 4 {
        return Err(malformed(
            line,
            format!(
                "expected 3 or 4 tab-separated columns, found {}",
                cols.len()
            ),
        ));
    }
    let when = cols[2].trim();
    let (timestamp, block) = match when.parse::<i64>() {
        Ok(b) => (None, Some(b)),
        Err(_) => (Some(when), None),
    };
    let label = cols.get(3).map(|s| s.trim().to_string());
    build_row(
        line,
        cols[0].trim().to_string(),
        cols[1].to_string(),
        timestamp,
        block,
        label,
    )
}

/// Parse dataset contents already in memory.
pub fn parse_dataset(
    contents: &str,
    format: DatasetFormat,
) -> Result<Vec<MessageBlock>, DatasetError> {
    let mut rows = Vec::new();
    for (i, raw) in contents.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if format == DatasetFormat::Tsv && line == 1 && raw.starts_with("id\t") {
            continue;
        }
        let row = match format {
            DatasetFormat::Jsonl => parse_jsonl_line(line, raw)?,
            DatasetFormat::Tsv => parse_tsv_line(line, raw)?,
        };
        rows.push(row);
    }
    group_rows(rows)
}

fn group_rows(rows: Vec<Row>) -> Result<Vec<MessageBlock>, DatasetError> {
    let Some(first) = rows.first() else {
        return Err(DatasetError::Empty);
    };
    let keyed_by_day = matches!(first.key, BlockKey::Day(_));
    let mut seen = HashSet::new();
    let mut grouped: BTreeMap<BlockKey, Vec<Message>> = BTreeMap::new();
    for row in rows {
        if matches!(row.key, BlockKey::Day(_)) != keyed_by_day {
            return Err(malformed(
                row.line,
                "dataset mixes `timestamp` and `block` keyed records",
            ));
        }
        if !seen.insert(row.message.id.clone()) {
            return Err(malformed(
                row.line,
                format!("duplicate id `{}`", row.message.id),
            ));
        }
        grouped.entry(row.key).or_default().push(row.message);
    }
    Ok(grouped
        .into_iter()
        .enumerate()
        .map(|(i, (key, messages))| MessageBlock {
            index: i + 1,
            day: match key {
                BlockKey::Day(d) => Some(d),
                BlockKey::Explicit(_) => None,
            },
            messages,
        })
        .collect())
}

/// Read a dataset file and split it into daily blocks.
pub fn ingest_dataset(
    path: &Path,
    format: DatasetFormat,
) -> Result<Vec<MessageBlock>, DatasetError> {
    let contents = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let blocks = parse_dataset(&contents, format)?;
    for b in &blocks {
        log::info!("block {}: {} messages", b.index, b.len());
    }
    Ok(blocks)
}

/// Serialize blocks back to JSONL (the format `ingest_dataset` reads).
pub fn write_jsonl(blocks: &[MessageBlock]) -> String {
    let mut out = String::new();
    for block in blocks {
        for m in &block.messages {
            let rec = JsonRecord {
                id: m.id.clone(),
                text: m.text.clone(),
                timestamp: m.timestamp.map(|t| t.to_rfc3339()),
                block: if m.timestamp.is_none() {
                    Some(block.index as i64)
                } else {
                    None
                },
                label: m.gold_label.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
