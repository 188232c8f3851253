//! Chat-completion client for a hosted or fine-tuned language model.
//!
//! Endpoint, model name and key come from `CHROMACTL_LLM_ENDPOINT`,
//! `CHROMACTL_LLM_MODEL` and `CHROMACTL_LLM_KEY`. Requests use the common
//! chat-completion shape (`model`, `messages`); only the first choice's
//! assistant text is read back.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "CHROMACTL_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "CHROMACTL_LLM_MODEL";
pub const ENV_KEY: &str = "CHROMACTL_LLM_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("{ENV_ENDPOINT} is not set")]
    NotConfigured,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

#[derive(Debug, Clone)]
pub struct HttpChatClient {
    pub endpoint: String,
    pub model: String,
    pub key: Option<String>,
    pub timeout: Duration,
}

impl HttpChatClient {
    pub fn from_env(timeout: Duration) -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| LlmError::NotConfigured)?;
        Ok(HttpChatClient {
            endpoint,
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into()),
            key: std::env::var(ENV_KEY).ok(),
            timeout,
        })
    }
}

pub fn request_body(model: &str, messages: &[ChatMessage]) -> Value {
    json!({
        "model": model,
        "messages": messages,
        "temperature": 0,
    })
}

/// Assistant text of the first choice.
pub fn response_text(body: &Value) -> Result<String, LlmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request_body(&self.model, messages))
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        response_text(&body)
    }
}

/// Contents of the first fenced code block, or the whole reply trimmed.
pub fn extract_code_block(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        // skip an info string such as ```arduino
        let body = match after.find('\n') {
            Some(nl) if !after[..nl].contains(';') => &after[nl + 1..],
            _ => after,
        };
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim().to_string();
    }
    reply.trim().to_string()
}
