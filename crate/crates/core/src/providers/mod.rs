//! Embedding and completion providers.
//!
//! Each capability has a remote HTTP implementation speaking the usual
//! `/embeddings` and `/chat/completions` JSON shapes, and a deterministic local
//! mock used for offline experiments and tests.

mod mock;
mod remote;

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::vectorops::Embedding;

pub use mock::{fnv1a64, mock_embed, tokenize, MockEmbedder, MockLlm, MOCK_DIM, STOPWORDS};
pub use remote::{RemoteConfig, RemoteEmbedder, RemoteLlm, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("text is empty")]
    EmptyText,
    #[error("upstream unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("upstream rejected credentials (HTTP {0})")]
    AuthFailure(u16),
    #[error("unexpected upstream payload: {0}")]
    SchemaError(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::UpstreamUnavailable(_))
    }
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// Length of every vector returned by [`embed`](Self::embed).
    fn dim(&self) -> usize;

    async fn embed(&self, text: &str) -> Result<Embedding, ProviderError>;
}

#[async_trait]
pub trait LlmClient: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    /// Number of `complete` invocations so far, successful or not.
    fn call_count(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: Value,
    /// Fields this gateway does not interpret, forwarded verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatMessage {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: Value::String(content.into()),
            extra: Map::new(),
        }
    }

    /// Plain-text content: a string, or the `text` parts of a content array joined by spaces.
    pub fn text(&self) -> Option<String> {
        match &self.content {
            Value::String(s) => Some(s.clone()),
            Value::Array(parts) => {
                let texts: Vec<&str> = parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect();
                (!texts.is_empty()).then(|| texts.join(" "))
            }
            _ => None,
        }
    }
}

/// Chat-completions request. Unknown top-level fields survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ChatRequest {
    pub fn user(model: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage::new("user", question)],
            extra: Map::new(),
        }
    }

    /// Checks that there is at least one message and the last one is from the user.
    pub fn validate(&self) -> Result<(), ProviderError> {
        let last = self
            .messages
            .last()
            .ok_or_else(|| ProviderError::InvalidRequest("messages must not be empty".into()))?;
        if last.role != "user" {
            return Err(ProviderError::InvalidRequest(format!(
                "last message must have role \"user\", found {:?}",
                last.role
            )));
        }
        Ok(())
    }

    /// Text of the last user message, the part of a request used as cache key.
    pub fn last_user_text(&self) -> Option<String> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .and_then(ChatMessage::text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub upstream_latency: Duration,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_preserves_unknown_fields() {
        let raw = json!({
            "model": "m",
            "temperature": 0.2,
            "messages": [{"role": "user", "content": "hi", "name": "bob"}]
        });
        let req: ChatRequest = serde_json::from_value(raw.clone()).unwrap();
        assert_eq!(req.extra["temperature"], json!(0.2));
        assert_eq!(serde_json::to_value(&req).unwrap(), raw);
    }

    #[test]
    fn validation() {
        let mut req = ChatRequest::user("m", "q");
        assert!(req.validate().is_ok());
        req.messages.push(ChatMessage::new("assistant", "a"));
        assert!(req.validate().is_err());
        req.messages.clear();
        assert!(req.validate().is_err());
    }

    #[test]
    fn last_user_text_handles_content_parts() {
        let req: ChatRequest = serde_json::from_value(json!({
            "model": "m",
            "messages": [
                {"role": "user", "content": "first"},
                {"role": "assistant", "content": "x"},
                {"role": "user", "content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}
            ]
        }))
        .unwrap();
        assert_eq!(req.last_user_text().as_deref(), Some("a b"));
    }
}
