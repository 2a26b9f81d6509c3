use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, ChatRequest, LlmError};
use crate::config::ChatConfig;

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    stream: bool,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Blocking client for an OpenAI-compatible `/v1/chat/completions` endpoint.
/// Each request is a fresh conversation; metadata is never sent.
pub struct OpenAiChat {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    max_retries: u32,
    backoff: Duration,
}

impl OpenAiChat {
    pub fn from_config(cfg: &ChatConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            agent,
            url: format!("{}/v1/chat/completions", cfg.base_url.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries.max(1),
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn post_once(&self, request: &ChatRequest) -> Result<String, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(CompletionRequest {
                model: &self.model,
                messages: &request.messages,
                temperature: self.temperature,
                stream: false,
            })
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("HTTP {status}: {body}"));
        }
        let parsed: CompletionResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| "response carried no message content".to_string())
    }
}

impl ChatProvider for OpenAiChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(request) {
                Ok(reply) => return Ok(reply),
                Err(message) if attempt >= self.max_retries => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(message) => {
                    log::warn!("chat attempt {attempt} failed: {message}");
                    thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                }
            }
        }
    }
}
