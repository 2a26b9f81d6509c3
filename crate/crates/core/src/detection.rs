//! RAG-based event detection over one block: retrieve, detect, assign or
//! create, maintain, then propagate anchor labels to messages.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::embedding::{embed_batch, Embedding, EmbeddingProvider};
use crate::kb::{event_encoding_text, BufferedText, EventRecord, KnowledgeBase, Refresher};
use crate::llm::{detect_event, evaluate_event, ChatProvider, Decision, LlmError};
use crate::model::MessageBlock;
use crate::sampling::SampledBlock;

/// Label given to anchors whose processing hit a provider error.
pub const UNRESOLVED: &str = "UNRESOLVED";

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("sampled block {sampled} does not match block {block}")]
    BlockMismatch { block: usize, sampled: usize },
    #[error("anchors cover {covered} of {total} messages")]
    Coverage { covered: usize, total: usize },
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Map a raw model answer onto a candidate name, ignoring case and
/// punctuation. `Others` or anything unmatched becomes [`Decision::Others`].
pub fn normalize_decision(raw: &str, candidates: &[String]) -> Decision {
    if let Some(exact) = candidates.iter().find(|c| c.as_str() == raw.trim()) {
        return Decision::Existing(exact.clone());
    }
    let wanted = normalize_name(raw);
    if wanted.is_empty() || wanted == "others" {
        return Decision::Others;
    }
    candidates
        .iter()
        .find(|c| normalize_name(c) == wanted)
        .map_or(Decision::Others, |c| Decision::Existing(c.clone()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub anchors: usize,
    /// Detection decisions that required the provider.
    pub detector_calls: usize,
    /// Evaluation requests: one per new event plus one per refresh attempt.
    pub evaluator_calls: usize,
    pub new_events: usize,
    pub refreshes: usize,
    pub quarantined: usize,
    pub anomalies: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub block_index: usize,
    pub anchor_labels: BTreeMap<usize, String>,
    /// One entry per message, in block order.
    pub message_labels: Vec<(String, String)>,
    pub kb: KnowledgeBase,
    pub telemetry: Telemetry,
    /// Too many anchors were quarantined (or any, in strict mode).
    pub failed: bool,
}

impl DetectionOutcome {
    /// `{"id": ..., "event": ...}` per line.
    pub fn labels_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, event) in &self.message_labels {
            out.push_str(&serde_json::json!({ "id": id, "event": event }).to_string());
            out.push('\n');
        }
        out
    }
}

struct LlmRefresher<'a> {
    chat: &'a dyn ChatProvider,
    embedder: &'a dyn EmbeddingProvider,
    attempts: Cell<usize>,
}

impl Refresher for LlmRefresher<'_> {
    fn refresh(
        &self,
        name: &str,
        buffered: &[BufferedText],
    ) -> Result<(Vec<String>, Embedding), String> {
        self.attempts.set(self.attempts.get() + 1);
        let text = buffered
            .iter()
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let ids: Vec<String> = buffered
            .iter()
            .flat_map(|b| b.message_ids.clone())
            .collect();
        let result = evaluate_event(self.chat, &text, &ids).map_err(|e| e.to_string())?;
        let encoded = event_encoding_text(name, &result.keywords);
        let embedding = embed_batch(self.embedder, &[encoded])
            .map_err(|e| e.to_string())?
            .remove(0);
        Ok((result.keywords, embedding))
    }
}

enum AnchorError {
    Llm(LlmError),
    Other(String),
}

impl std::fmt::Display for AnchorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorError::Llm(e) => e.fmt(f),
            AnchorError::Other(s) => f.write_str(s),
        }
    }
}

/// Run detection over the anchors of one block, in stream order, against a
/// fresh knowledge base.
pub fn detect_block(
    block: &MessageBlock,
    sampled: &SampledBlock,
    config: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    chat: &dyn ChatProvider,
) -> Result<DetectionOutcome, DetectionError> {
    if sampled.block_index != block.index {
        return Err(DetectionError::BlockMismatch {
            block: block.index,
            sampled: sampled.block_index,
        });
    }
    let covered: usize = sampled.anchors.iter().map(|a| a.len()).sum();
    if covered != block.len() {
        return Err(DetectionError::Coverage {
            covered,
            total: block.len(),
        });
    }
    let started = Instant::now();
    let mut kb = KnowledgeBase::new(block.index);
    let mut telemetry = Telemetry {
        anchors: sampled.anchors.len(),
        ..Telemetry::default()
    };
    let refresher = LlmRefresher {
        chat,
        embedder,
        attempts: Cell::new(0),
    };
    let mut anchor_labels = BTreeMap::new();

    for (anchor, sample) in sampled.anchors.iter().zip(&sampled.samples) {
        let text = &sample.aggregated_text;
        let ids = &sample.selected_ids;
        let result = (|| -> Result<String, AnchorError> {
            let query = embed_batch(embedder, std::slice::from_ref(text))
                .map_err(|e| AnchorError::Other(e.to_string()))?
                .remove(0);
            let candidates: Vec<(String, Vec<String>)> = kb
                .retrieve(&query, config.q, config.gamma)
                .into_iter()
                .map(|hit| {
                    let kws = kb
                        .get(&hit.name)
                        .map(|r| r.keywords.clone())
                        .unwrap_or_default();
                    (hit.name, kws)
                })
                .collect();
            let detection = detect_event(chat, text, &candidates, ids).map_err(AnchorError::Llm)?;
            if detection.provider_calls > 0 {
                telemetry.detector_calls += 1;
            }
            if detection.anomaly {
                telemetry.anomalies += 1;
            }
            let buffered = BufferedText {
                text: text.clone(),
                message_ids: ids.clone(),
            };
            match detection.decision {
                Decision::Existing(name) => {
                    kb.buffer_message(&name, buffered)
                        .map_err(|e| AnchorError::Other(e.to_string()))?;
                    Ok(name)
                }
                Decision::Others => {
                    telemetry.evaluator_calls += 1;
                    let eval = evaluate_event(chat, text, ids).map_err(AnchorError::Llm)?;
                    let encoded = event_encoding_text(&eval.event_name, &eval.keywords);
                    let embedding = embed_batch(embedder, &[encoded])
                        .map_err(|e| AnchorError::Other(e.to_string()))?
                        .remove(0);
                    let name = kb.insert_event(EventRecord {
                        name: eval.event_name,
                        keywords: eval.keywords,
                        embedding,
                        created_at_block: block.index,
                        refresh_count: 0,
                    });
                    telemetry.new_events += 1;
                    kb.buffer_message(&name, buffered)
                        .map_err(|e| AnchorError::Other(e.to_string()))?;
                    Ok(name)
                }
            }
        })();
        let label = match result {
            Ok(name) => name,
            Err(e) => {
                log::warn!(
                    "block {} anchor {} quarantined: {e}",
                    block.index,
                    anchor.id
                );
                telemetry.quarantined += 1;
                UNRESOLVED.to_string()
            }
        };
        anchor_labels.insert(anchor.id, label);

        let report = kb.maintain(config.theta, &refresher);
        telemetry.refreshes += report.refreshed.len();
    }
    telemetry.evaluator_calls += refresher.attempts.get();

    let mut by_position = vec![String::new(); block.len()];
    for anchor in &sampled.anchors {
        let label = &anchor_labels[&anchor.id];
        for &pos in &anchor.member_positions {
            by_position[pos] = label.clone();
        }
    }
    let message_labels = block
        .messages
        .iter()
        .zip(by_position)
        .map(|(m, l)| (m.id.clone(), l))
        .collect();

    let quarantined_share = telemetry.quarantined as f64 / telemetry.anchors.max(1) as f64;
    let failed = (config.strict && telemetry.quarantined > 0)
        || (telemetry.quarantined > 0 && quarantined_share >= config.quarantine_limit);
    telemetry.wall_ms = u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX);
    Ok(DetectionOutcome {
        block_index: block.index,
        anchor_labels,
        message_labels,
        kb,
        telemetry,
        failed,
    })
}
