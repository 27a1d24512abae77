//! Provider-agnostic chat completion.
//!
//! Everything that talks to a model goes through [`ChatGateway`]. The crate
//! ships an OpenAI-compatible HTTP adapter, a scripted mock for offline runs,
//! record/replay wrappers backed by a newline-delimited store, and an
//! in-memory capture wrapper for inspecting requests.

mod capture;
mod mock;
mod openai;
mod store;

pub use capture::CaptureGateway;
pub use mock::{MockFailure, MockGateway, MockRule, MockScript};
pub use openai::{OpenAiGateway, RetryPolicy};
pub use store::{record_replay, RecordGateway, ReplayGateway, StoreMode, StoreRecord};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{Role, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageRole::System => "system",
            MessageRole::User => "user",
            MessageRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::Assistant,
            content: content.into(),
        }
    }
}

impl From<&Transcript> for Vec<ChatMessage> {
    fn from(transcript: &Transcript) -> Self {
        transcript
            .entries
            .iter()
            .map(|e| match e.role {
                Role::User => ChatMessage::user(e.text.clone()),
                Role::Assistant => ChatMessage::assistant(e.text.clone()),
            })
            .collect()
    }
}

/// Model selection and decoding parameters shared by both agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".to_string(),
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(config: &ModelConfig, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be > 0".into(),
            ));
        }
        let systems = self
            .messages
            .iter()
            .filter(|m| m.role == MessageRole::System)
            .count();
        if systems > 1 || (systems == 1 && self.messages[0].role != MessageRole::System) {
            return Err(GatewayError::InvalidRequest(
                "at most one system message, and only in first position".into(),
            ));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != MessageRole::System && m.content.is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "empty {} message",
                m.role.as_str()
            )));
        }
        Ok(())
    }

    /// All message contents joined by newlines.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == MessageRole::User)
            .map(|m| m.content.as_str())
    }

    /// Stable key for record/replay. Whitespace runs collapse to one space
    /// and temperature is left out.
    pub fn hash(&self) -> String {
        let messages: Vec<(&str, String)> = self
            .messages
            .iter()
            .map(|m| (m.role.as_str(), normalize_whitespace(&m.content)))
            .collect();
        let canonical = serde_json::json!({
            "model": self.model,
            "max_tokens": self.max_tokens,
            "messages": messages,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        hex::encode(digest)
    }
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Gateway failures. Each case says whether a retry could help.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider error: {message}")]
    Provider { message: String, retryable: bool },
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("no recorded reply for request {0}")]
    CacheMiss(String),
    #[error("record store: {0}")]
    Storage(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::RateLimited(_) | GatewayError::Timeout(_) => true,
            GatewayError::Provider { retryable, .. } => *retryable,
            GatewayError::Auth(_)
            | GatewayError::CacheMiss(_)
            | GatewayError::Storage(_)
            | GatewayError::InvalidRequest(_) => false,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Auth(_) => "auth_error",
            GatewayError::RateLimited(_) => "rate_limited",
            GatewayError::Provider { .. } => "provider_error",
            GatewayError::Timeout(_) => "timeout",
            GatewayError::CacheMiss(_) => "cache_miss",
            GatewayError::Storage(_) => "storage_error",
            GatewayError::InvalidRequest(_) => "invalid_request",
        }
    }
}

pub trait ChatGateway: Send + Sync {
    /// Short adapter name for logs and session headers.
    fn name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<G: ChatGateway + ?Sized> ChatGateway for Arc<G> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for Box<G> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}
