//! Chat-completion and embedding providers.
//!
//! Two chat implementations share [`ChatProvider`]: an OpenAI-compatible
//! HTTP client and [`ScriptedMock`], which answers from a script and logs
//! every call so pipeline runs can be replayed exactly.

mod embedding;
mod mock;
mod openai;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{content_hash, EmbeddingCache, HashEmbedder};
pub use mock::{CallRecord, MockScript, ScriptEntry, ScriptedMock};
pub(crate) use mock::split_fields;
pub use openai::{OpenAiClient, OpenAiConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageId {
    A1,
    A2,
    B,
    C,
    D,
    E,
}

impl StageId {
    pub const ALL: [StageId; 6] = [StageId::A1, StageId::A2, StageId::B, StageId::C, StageId::D, StageId::E];

    pub fn as_str(self) -> &'static str {
        match self {
            StageId::A1 => "A1",
            StageId::A2 => "A2",
            StageId::B => "B",
            StageId::C => "C",
            StageId::D => "D",
            StageId::E => "E",
        }
    }

    pub fn default_temperature(self) -> f64 {
        match self {
            StageId::A1 | StageId::B | StageId::D => 0.0,
            StageId::A2 | StageId::C | StageId::E => 0.7,
        }
    }

    pub fn default_max_tokens(self) -> u32 {
        match self {
            StageId::A1 => 4,
            StageId::B => 8,
            StageId::D => 256,
            StageId::A2 | StageId::C | StageId::E => 512,
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        StageId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRequest {
    pub stage: StageId,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl StageRequest {
    /// Request with the stage's default decoding parameters.
    pub fn new(stage: StageId, messages: Vec<Message>) -> Self {
        Self {
            stage,
            messages,
            temperature: stage.default_temperature(),
            max_tokens: stage.default_max_tokens(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.messages.first() {
            None => Err(ProviderError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => {
                Err(ProviderError::InvalidRequest("first message must be the system prompt".into()))
            }
            _ if !(self.temperature.is_finite() && self.temperature >= 0.0) => {
                Err(ProviderError::InvalidRequest(format!("bad temperature {}", self.temperature)))
            }
            _ => Ok(()),
        }
    }

    /// Content of the last user message, or "" if there is none.
    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub provider_latency_ms: u64,
}

impl StageCompletion {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            provider_latency_ms: 0,
        }
    }

    /// Placeholder recorded in a stage trace when the provider failed.
    pub fn failed() -> Self {
        Self {
            text: String::new(),
            finish_reason: FinishReason::Error,
            provider_latency_ms: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("PROVIDER_UNREACHABLE: {0}")]
    Unreachable(String),
    #[error("PROVIDER_ERROR: status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("PROVIDER_ERROR: malformed response: {0}")]
    BadResponse(String),
    #[error("MOCK_NO_MATCH: no script entry for stage {stage} and message {message:?}")]
    MockNoMatch { stage: StageId, message: String },
    #[error("CACHE_MISS: no embedding cached for {0}")]
    CacheMiss(String),
    #[error("DIMENSION_MISMATCH: expected {expected} dimensions, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("INVALID_REQUEST: {0}")]
    InvalidRequest(String),
    #[error("PARSE_ERROR: line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("IO_ERROR: {0}")]
    Io(#[from] std::io::Error),
}

impl ProviderError {
    pub fn code(&self) -> &'static str {
        match self {
            ProviderError::Unreachable(_) => "PROVIDER_UNREACHABLE",
            ProviderError::Status { .. } | ProviderError::BadResponse(_) => "PROVIDER_ERROR",
            ProviderError::MockNoMatch { .. } => "MOCK_NO_MATCH",
            ProviderError::CacheMiss(_) => "CACHE_MISS",
            ProviderError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            ProviderError::InvalidRequest(_) => "INVALID_REQUEST",
            ProviderError::Parse { .. } => "PARSE_ERROR",
            ProviderError::Io(_) => "IO_ERROR",
        }
    }

    /// Whether the same request may succeed later.
    pub fn retryable(&self) -> bool {
        match self {
            ProviderError::Unreachable(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &StageRequest) -> Result<StageCompletion, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &StageRequest) -> Result<StageCompletion, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, request: &StageRequest) -> Result<StageCompletion, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_defaults() {
        assert_eq!(StageId::A1.default_max_tokens(), 4);
        assert_eq!(StageId::B.default_max_tokens(), 8);
        assert_eq!(StageId::D.default_max_tokens(), 256);
        assert_eq!(StageId::E.default_max_tokens(), 512);
        assert_eq!(StageId::D.default_temperature(), 0.0);
        assert_eq!(StageId::C.default_temperature(), 0.7);
        assert_eq!("a2".parse::<StageId>(), Ok(StageId::A2));
        assert!("F".parse::<StageId>().is_err());
    }

    #[test]
    fn request_validation() {
        let ok = StageRequest::new(StageId::B, vec![Message::system("s"), Message::user("Hi!")]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.last_user_message(), "Hi!");
        let empty = StageRequest::new(StageId::B, vec![]);
        assert_eq!(empty.validate().unwrap_err().code(), "INVALID_REQUEST");
        let no_system = StageRequest::new(StageId::B, vec![Message::user("Hi!")]);
        assert!(no_system.validate().is_err());
        let hot = StageRequest { temperature: -1.0, ..ok };
        assert!(hot.validate().is_err());
    }

    #[test]
    fn retry_classification() {
        assert!(ProviderError::Unreachable("x".into()).retryable());
        assert!(ProviderError::Status { status: 503, body: String::new() }.retryable());
        assert!(!ProviderError::Status { status: 400, body: String::new() }.retryable());
    }
}
