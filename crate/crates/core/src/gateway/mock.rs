use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatGateway, ChatRequest, GatewayError};

/// Error a scripted rule produces instead of a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Auth,
    RateLimited,
    Provider,
    Timeout,
}

impl MockFailure {
    fn to_error(self) -> GatewayError {
        match self {
            MockFailure::Auth => GatewayError::Auth("scripted".into()),
            MockFailure::RateLimited => GatewayError::RateLimited("scripted".into()),
            MockFailure::Provider => GatewayError::Provider {
                message: "scripted".into(),
                retryable: false,
            },
            MockFailure::Timeout => GatewayError::Timeout("scripted".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => Vec::new(),
        Some(OneOrMany::One(s)) => vec![s],
        Some(OneOrMany::Many(v)) => v,
    })
}

/// One scripted rule. Every condition that is set must hold; a rule with no
/// conditions matches everything.
///
/// `reply` may use `{last_user}` (final user message) and `{request_hash}`.
/// When `relevance` is set the reply is prefixed with a `relevance: <r>` line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Substrings that must all occur somewhere in the request.
    #[serde(
        default,
        deserialize_with = "one_or_many",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub contains: Vec<String>,
    /// Substring of the final user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_user: Option<String>,
    /// Exact request hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<MockFailure>,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            contains: vec![needle.into()],
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn contains_all<I, S>(needles: I, reply: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            contains: needles.into_iter().map(Into::into).collect(),
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn last_user(needle: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            last_user: Some(needle.into()),
            reply: reply.into(),
            ..Self::default()
        }
    }

    pub fn with_relevance(mut self, relevance: f64) -> Self {
        self.relevance = Some(relevance);
        self
    }

    pub fn failing(mut self, failure: MockFailure) -> Self {
        self.fail = Some(failure);
        self
    }

    pub fn and_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    fn matches(&self, request: &ChatRequest, full_text: &str, hash: &str) -> bool {
        self.contains.iter().all(|n| full_text.contains(n.as_str()))
            && self
                .last_user
                .as_deref()
                .is_none_or(|n| request.last_user().is_some_and(|u| u.contains(n)))
            && self.hash.as_deref().is_none_or(|h| h == hash)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: String,
}

impl MockScript {
    pub fn new(default_reply: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_reply: default_reply.into(),
        }
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Storage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| GatewayError::Storage(format!("{}: {e}", path.display())))
    }

    /// Applies the first matching rule, else the default reply.
    pub fn answer(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let full_text = request.full_text();
        let hash = request.hash();
        let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.matches(request, &full_text, &hash))
        else {
            return Ok(self.default_reply.clone());
        };
        if let Some(failure) = rule.fail {
            return Err(failure.to_error());
        }
        let body = rule
            .reply
            .replace("{last_user}", request.last_user().unwrap_or(""))
            .replace("{request_hash}", &hash);
        Ok(match rule.relevance {
            Some(r) => format!("relevance: {r}\n{body}"),
            None => body,
        })
    }
}

/// Deterministic gateway: a pure function of the request and its script.
#[derive(Debug, Clone, Default)]
pub struct MockGateway {
    script: MockScript,
}

impl MockGateway {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatGateway for MockGateway {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        self.script.answer(request)
    }
}
