//! Language-model providers: a deterministic canned-reply table for offline
//! use and an OpenAI-compatible HTTP client.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Role;
use crate::error::{AssistError, Result};

pub const API_KEY_ENV: &str = "CHATBCI_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    pub content: String,
}

/// Knobs passed through to the provider untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { model: "gpt-4o".into(), temperature: 0.2, max_tokens: 1024 }
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    /// One completion attempt. Retries are the caller's business.
    fn complete(&self, messages: &[WireMessage], params: &GenerationParams) -> std::result::Result<String, String>;

    /// True when no network traffic can occur.
    fn is_offline(&self) -> bool {
        false
    }
}

pub fn content_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockEntry {
    /// Literal human message; hashed on load.
    #[serde(default)]
    pub prompt: Option<String>,
    /// Hex SHA-256 of the human message, as an alternative to `prompt`.
    #[serde(default)]
    pub sha256: Option<String>,
    pub reply: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    #[serde(default)]
    pub fallback: Option<String>,
}

/// Replies looked up by the SHA-256 of the last human message.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    replies: HashMap<String, String>,
    fallback: Option<String>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn insert(&mut self, prompt: &str, reply: impl Into<String>) {
        self.replies.insert(content_key(prompt), reply.into());
    }

    pub fn from_table(table: MockTable) -> Result<Self> {
        let mut p = Self { fallback: table.fallback, ..Self::default() };
        for e in table.entries {
            let key = match (e.prompt, e.sha256) {
                (Some(prompt), _) => content_key(&prompt),
                (None, Some(h)) => h.to_ascii_lowercase(),
                (None, None) => return Err(AssistError::Config("mock entry needs prompt or sha256".into())),
            };
            p.replies.insert(key, e.reply);
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, messages: &[WireMessage], _: &GenerationParams) -> std::result::Result<String, String> {
        let last = messages.iter().rev().find(|m| m.role == Role::Human).ok_or("no human message to answer")?;
        let key = content_key(&last.content);
        self.replies
            .get(&key)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| format!("no canned reply for message {}", &key[..12]))
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// `POST {base_url}/chat/completions` with a bearer key from
/// `CHATBCI_LLM_API_KEY`.
pub struct OpenAiCompatible {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl OpenAiCompatible {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), api_key: api_key.into(), agent }
    }

    pub fn from_env(base_url: impl Into<String>) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| AssistError::Config(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(base_url, key, Duration::from_secs(120)))
    }
}

impl Provider for OpenAiCompatible {
    fn name(&self) -> &str {
        "openai-compatible"
    }

    fn complete(&self, messages: &[WireMessage], params: &GenerationParams) -> std::result::Result<String, String> {
        let wire: Vec<serde_json::Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::Human => "user",
                    Role::Assistant => "assistant",
                    Role::System => "system",
                };
                serde_json::json!({"role": role, "content": m.content})
            })
            .collect();
        let body = serde_json::json!({
            "model": params.model,
            "messages": wire,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let mut resp = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if status >= 400 {
            return Err(format!("HTTP {status}: {}", value["error"]["message"].as_str().unwrap_or("request failed")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".into())
    }
}

/// Up to `max_retries` further attempts after the first, sleeping
/// `backoff · 2^i` between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, backoff_ms: 500 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, backoff_ms: 0 }
    }

    /// Returns the reply or the list of per-attempt failures.
    pub fn run(
        &self,
        provider: &dyn Provider,
        messages: &[WireMessage],
        params: &GenerationParams,
    ) -> std::result::Result<String, Vec<String>> {
        let mut failures = Vec::new();
        for attempt in 0..=self.max_retries.min(2) {
            if attempt > 0 && self.backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(self.backoff_ms << (attempt - 1)));
            }
            match provider.complete(messages, params) {
                Ok(reply) => return Ok(reply),
                Err(e) => failures.push(e),
            }
        }
        Err(failures)
    }
}
