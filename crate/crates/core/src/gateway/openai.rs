use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;
use tracing::warn;

use super::{ChatGateway, ChatRequest, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

/// Adapter for OpenAI-compatible `/chat/completions` endpoints.
pub struct OpenAiGateway {
    client: Client,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl OpenAiGateway {
    pub fn new(base_url: &str, api_key: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let client =
            Client::builder()
                .timeout(timeout)
                .build()
                .map_err(|e| GatewayError::Provider {
                    message: format!("building http client: {e}"),
                    retryable: false,
                })?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let response = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(map_transport)?;

        let status = response.status();
        let text = response.text().map_err(map_transport)?;
        if !status.is_success() {
            return Err(map_status(status, &text));
        }
        parse_completion(&text)
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

fn parse_completion(body: &str) -> Result<String, GatewayError> {
    let parsed: Completion = serde_json::from_str(body).map_err(|e| GatewayError::Provider {
        message: format!("malformed completion body: {e}"),
        retryable: false,
    })?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| GatewayError::Provider {
            message: "completion has no content".into(),
            retryable: false,
        })
}

fn map_transport(err: reqwest::Error) -> GatewayError {
    if err.is_timeout() {
        GatewayError::Timeout(err.to_string())
    } else {
        GatewayError::Provider {
            message: err.to_string(),
            retryable: err.is_connect() || err.is_request(),
        }
    }
}

fn map_status(status: StatusCode, body: &str) -> GatewayError {
    let detail = format!("{status}: {}", body.chars().take(200).collect::<String>());
    match status.as_u16() {
        401 | 403 => GatewayError::Auth(detail),
        429 => GatewayError::RateLimited(detail),
        408 | 504 => GatewayError::Timeout(detail),
        500..=599 => GatewayError::Provider {
            message: detail,
            retryable: true,
        },
        _ => GatewayError::Provider {
            message: detail,
            retryable: false,
        },
    }
}

impl ChatGateway for OpenAiGateway {
    fn name(&self) -> &str {
        "openai"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Err(err) if err.is_retryable() && attempt < self.retry.retries => {
                    let delay = self.retry.delay(attempt);
                    warn!(%err, ?delay, attempt, "retrying completion");
                    thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
