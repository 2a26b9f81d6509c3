//! Chat-model gateway for the Evaluation-LLM and Detection-LLM roles:
//! the provider contract, request construction, and strict response
//! sanitization.

mod mock;
mod openai;
pub mod parse;
pub mod prompts;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::normalize_decision;
use crate::kb::MAX_KEYWORDS;
use crate::text;

pub use mock::{MockOracle, RecordingProvider};
pub use openai::OpenAiChat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("chat request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("unparsable model reply: {0}")]
    Parse(String),
    #[error("unknown message id `{0}` in request metadata")]
    UnknownMessage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Evaluation,
    Detection,
}

/// Side-channel data that never reaches the prompt.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequestMetadata {
    /// Ids of the messages behind the request text, in stream order.
    pub message_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub task: Task,
    pub messages: Vec<ChatMessage>,
    pub metadata: RequestMetadata,
}

/// A chat model endpoint. Failures are typed errors, never empty replies.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub event_name: String,
    /// 1 to 10 single-word keywords, each present in the input text.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Existing(String),
    Others,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub decision: Decision,
    /// Provider calls made (0 when there were no candidates).
    pub provider_calls: u32,
    /// The reply could not be parsed and the decision fell back to `Others`.
    pub anomaly: bool,
}

/// Call the provider, re-prompting once for JSON when the first reply has
/// no recoverable object.
fn complete_json(
    provider: &dyn ChatProvider,
    mut request: ChatRequest,
) -> Result<(serde_json::Map<String, serde_json::Value>, u32), (LlmError, u32)> {
    let reply = provider.complete(&request).map_err(|e| (e, 1))?;
    if let Some(obj) = parse::extract_object(&reply) {
        return Ok((obj, 1));
    }
    log::debug!("reply was not JSON, re-prompting: {reply:?}");
    request.messages.push(ChatMessage::assistant(reply));
    request
        .messages
        .push(ChatMessage::user(prompts::JSON_REPAIR_PROMPT));
    let reply = provider.complete(&request).map_err(|e| (e, 2))?;
    parse::extract_object(&reply)
        .map(|obj| (obj, 2))
        .ok_or((LlmError::Parse(reply), 2))
}

/// Keep keywords that are a single word present in `source`; fall back to
/// the most frequent terms of `source` when none survive.
pub fn sanitize_keywords(raw: &[String], source: &str) -> Vec<String> {
    let tokens: HashSet<String> = text::tokenize(source).into_iter().collect();
    let words: HashSet<String> = source.split_whitespace().map(str::to_lowercase).collect();
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for kw in raw {
        let kw = kw.trim();
        if kw.is_empty() || kw.contains(char::is_whitespace) {
            continue;
        }
        let lower = kw.to_lowercase();
        if !(tokens.contains(&lower) || words.contains(&lower)) {
            continue;
        }
        if seen.insert(lower) {
            kept.push(kw.to_string());
        }
        if kept.len() == MAX_KEYWORDS {
            break;
        }
    }
    if kept.is_empty() {
        kept = text::top_terms(source, MAX_KEYWORDS);
    }
    kept
}

/// Ask the Evaluation-LLM for an event name and keywords describing `text`.
pub fn evaluate_event(
    provider: &dyn ChatProvider,
    text: &str,
    message_ids: &[String],
) -> Result<EvaluationResult, LlmError> {
    if text.trim().is_empty() {
        return Err(LlmError::InvalidRequest("empty evaluation text".into()));
    }
    let request = ChatRequest {
        task: Task::Evaluation,
        messages: vec![
            ChatMessage::system(prompts::EVALUATION_PROMPT),
            ChatMessage::user(text),
        ],
        metadata: RequestMetadata {
            message_ids: message_ids.to_vec(),
        },
    };
    let (obj, _) = complete_json(provider, request).map_err(|(e, _)| e)?;
    let name = parse::field(&obj, "EVENT-NAME")
        .and_then(parse::as_text)
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .ok_or_else(|| LlmError::Parse(format!("missing EVENT-NAME in {obj:?}")))?;
    let raw = parse::field(&obj, "KEYWORDS")
        .map(parse::as_list)
        .unwrap_or_default();
    Ok(EvaluationResult {
        event_name: name,
        keywords: sanitize_keywords(&raw, text),
    })
}

/// Ask the Detection-LLM which candidate, if any, `text` belongs to.
/// With no candidates the answer is `Others` and the provider is not called.
pub fn detect_event(
    provider: &dyn ChatProvider,
    text: &str,
    candidates: &[(String, Vec<String>)],
    message_ids: &[String],
) -> Result<DetectionResult, LlmError> {
    if candidates.is_empty() {
        return Ok(DetectionResult {
            decision: Decision::Others,
            provider_calls: 0,
            anomaly: false,
        });
    }
    let request = ChatRequest {
        task: Task::Detection,
        messages: vec![
            ChatMessage::system(prompts::detection_prompt(candidates)),
            ChatMessage::user(text),
        ],
        metadata: RequestMetadata {
            message_ids: message_ids.to_vec(),
        },
    };
    let names: Vec<String> = candidates.iter().map(|(n, _)| n.clone()).collect();
    match complete_json(provider, request) {
        Ok((obj, calls)) => match parse::field(&obj, "EVENT").and_then(parse::as_text) {
            Some(raw) => Ok(DetectionResult {
                decision: normalize_decision(&raw, &names),
                provider_calls: calls,
                anomaly: false,
            }),
            None => {
                log::warn!("detection reply lacks EVENT field: {obj:?}");
                Ok(DetectionResult {
                    decision: Decision::Others,
                    provider_calls: calls,
                    anomaly: true,
                })
            }
        },
        Err((LlmError::Parse(reply), calls)) => {
            log::warn!("detection reply unparsable, treating as Others: {reply:?}");
            Ok(DetectionResult {
                decision: Decision::Others,
                provider_calls: calls,
                anomaly: true,
            })
        }
        Err((e, _)) => Err(e),
    }
}
