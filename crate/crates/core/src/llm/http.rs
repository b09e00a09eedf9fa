//! Chat-completion client over HTTP with bounded retries.

use std::fmt;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError, ModelProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.multiplier.powi(retry.saturating_sub(1) as i32))
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

pub struct HttpBackend {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Result<Self, LlmError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { client, endpoint: endpoint.into(), api_key, retry })
    }

    /// Builds a client for `profile`, reading the key from its named
    /// environment variable.
    pub fn from_profile(profile: &ModelProfile, retry: RetryPolicy) -> Result<Self, LlmError> {
        if profile.endpoint.trim().is_empty() {
            return Err(LlmError::InvalidProfile(format!("{}: endpoint is empty", profile.name)));
        }
        let api_key = match &profile.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingApiKey(var.clone()))?),
            None => None,
        };
        Self::new(profile.endpoint.clone(), api_key, retry)
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, Attempt> {
        let mut call = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        let body = response.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {}: {}", status.as_u16(), truncate(&body))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(LlmError::Status { status: status.as_u16(), body: truncate(&body) }));
        }
        parse_reply(&body).map_err(Attempt::Fatal)
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=attempts {
            if n > 1 {
                std::thread::sleep(self.retry.delay(n - 1));
            }
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt = n, error = %msg, "chat request failed");
                    last = msg;
                }
            }
        }
        Err(LlmError::Transport { attempts, message: last })
    }
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

fn parse_reply(body: &str) -> Result<String, LlmError> {
    let reply: Reply = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    reply
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))
}

fn truncate(body: &str) -> String {
    const LIMIT: usize = 500;
    match body.char_indices().nth(LIMIT) {
        Some((at, _)) => format!("{}...", &body[..at]),
        None => body.to_string(),
    }
}
