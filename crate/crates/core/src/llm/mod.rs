//! Chat-completion backends.
//!
//! A [`ChatSession`] accumulates the conversation for one repair. Each
//! [`complete`] call checks the context budget of the [`ModelProfile`],
//! sends the whole session through a [`ChatBackend`], and appends the reply.
//! Backends are the HTTP client, cassette replay, and a recorder that wraps
//! any other backend.

mod cassette;
mod http;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Tokenizer;

pub use cassette::{Cassette, CassetteEntry, RecordingBackend, ReplayBackend};
pub use http::{HttpBackend, RetryPolicy};

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 1024;

/// Tokens charged per message for role markers and separators.
pub const MESSAGE_OVERHEAD_TOKENS: usize = 4;
/// Tokens charged once per request for priming the assistant reply.
pub const REPLY_PRIMING_TOKENS: usize = 3;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("context overflow: session needs {estimate} tokens plus {headroom} for the reply, model {model} allows {context_length}")]
    ContextOverflow { model: String, estimate: usize, headroom: usize, context_length: usize },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("replay mismatch at entry {index}: cassette has {expected}, request is {actual}")]
    ReplayMismatch { index: usize, expected: String, actual: String },
    #[error("replay cassette exhausted after {consumed} entries")]
    ReplayExhausted { consumed: usize },
    #[error("messages must alternate user/assistant after an optional system message; cannot add {role} after {previous}")]
    RoleOrder { role: Role, previous: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
    #[error("unknown model preset {0}")]
    UnknownPreset(String),
    #[error("cassette {path}: {reason}")]
    Cassette { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    /// Model identifier sent on the wire; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub context_length: usize,
    /// Chat-completion URL, or a cassette path when replaying.
    #[serde(default)]
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: usize,
    /// Descriptive only, e.g. "70B".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<String>,
    #[serde(default)]
    pub tokenizer: Tokenizer,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_output_tokens() -> usize {
    DEFAULT_MAX_OUTPUT_TOKENS
}

impl ModelProfile {
    pub const PRESETS: [&'static str; 4] = ["gpt-3.5-turbo", "gpt-4o", "llama-3-8b", "llama-3-70b"];

    pub fn preset(name: &str) -> Result<Self, LlmError> {
        let (context_length, params, tokenizer, key) = match name {
            "gpt-3.5-turbo" => (16_385, "175B", Tokenizer::Cl100kBase, Some("OPENAI_API_KEY")),
            "gpt-4o" => (128_000, ">1760B", Tokenizer::O200kBase, Some("OPENAI_API_KEY")),
            "llama-3-8b" => (8_192, "8B", Tokenizer::Cl100kBase, None),
            "llama-3-70b" => (8_192, "70B", Tokenizer::Cl100kBase, None),
            other => return Err(LlmError::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            model_id: None,
            context_length,
            endpoint: String::new(),
            api_key_env: key.map(str::to_string),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            parameter_count: Some(params.to_string()),
            tokenizer,
        })
    }

    pub fn wire_model(&self) -> &str {
        self.model_id.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.name.trim().is_empty() {
            return Err(LlmError::InvalidProfile("name is empty".into()));
        }
        if self.context_length == 0 {
            return Err(LlmError::InvalidProfile(format!("{}: context_length must be positive", self.name)));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidProfile(format!("{}: temperature {} outside [0, 2]", self.name, self.temperature)));
        }
        if self.max_output_tokens == 0 || self.max_output_tokens >= self.context_length {
            return Err(LlmError::InvalidProfile(format!(
                "{}: max_output_tokens must be in 1..{}",
                self.name, self.context_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSession {
    messages: Vec<ChatMessage>,
    token_estimate: usize,
    tokenizer: Tokenizer,
}

impl ChatSession {
    pub fn new(tokenizer: Tokenizer) -> Self {
        Self { messages: Vec::new(), token_estimate: REPLY_PRIMING_TOKENS, tokenizer }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    /// Estimated prompt tokens for the next request, reply priming included.
    pub fn token_estimate(&self) -> usize {
        self.token_estimate
    }

    pub fn push(&mut self, role: Role, content: impl Into<String>) -> Result<(), LlmError> {
        let last = self.messages.last().map(|m| m.role);
        let ok = match (role, last) {
            (Role::System, None) => true,
            (Role::System, Some(_)) => false,
            (Role::User, None | Some(Role::System) | Some(Role::Assistant)) => true,
            (Role::Assistant, Some(Role::User)) => true,
            _ => false,
        };
        if !ok {
            let previous = last.map_or_else(|| "nothing".to_string(), |r| r.to_string());
            return Err(LlmError::RoleOrder { role, previous });
        }
        let content = content.into();
        self.token_estimate += self.tokenizer.count(&content) + MESSAGE_OVERHEAD_TOKENS;
        self.messages.push(ChatMessage { role, content });
        Ok(())
    }
}

/// Wire request in chat-completion shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ChatRequest {
    /// Hex SHA-256 of the canonical JSON body. Credentials never enter the
    /// body, so they never enter the fingerprint either.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&body))
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).send(request)
    }
}

/// Sends `session` and appends the reply as an assistant message.
pub fn complete(session: &mut ChatSession, profile: &ModelProfile, backend: &dyn ChatBackend) -> Result<String, LlmError> {
    let estimate = session.token_estimate();
    if estimate + profile.max_output_tokens > profile.context_length {
        return Err(LlmError::ContextOverflow {
            model: profile.name.clone(),
            estimate,
            headroom: profile.max_output_tokens,
            context_length: profile.context_length,
        });
    }
    let request = ChatRequest {
        model: profile.wire_model().to_string(),
        messages: session.messages().to_vec(),
        temperature: profile.temperature,
        max_tokens: profile.max_output_tokens,
    };
    let reply = backend.send(&request)?;
    session.push(Role::Assistant, reply.clone())?;
    Ok(reply)
}
