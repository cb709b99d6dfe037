//! Chat-completion and embedding providers.

mod embed;
mod live;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{LocalHashEmbedder, DEFAULT_EMBEDDING_DIM};
pub use live::{LiveConfig, LiveProvider};
pub use scripted::{ScriptBuilder, ScriptStep, ScriptedProvider, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: MessageRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Which agent is asking; used for fixture checks and logs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        Ok(ChatRequest { messages, temperature: 0.0, max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS, agent: None })
    }

    pub fn with_agent(mut self, agent: impl Into<String>) -> Self {
        self.agent = Some(agent.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, tokens: u32) -> Self {
        self.max_output_tokens = tokens;
        self
    }

    pub fn last_role(&self) -> Option<MessageRole> {
        self.messages.last().map(|m| m.role)
    }

    pub fn token_estimate(&self) -> u32 {
        self.messages.iter().map(|m| estimate_tokens(&m.content)).sum()
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values`; `None` for an empty or all-zero vector.
    pub fn normalized(values: Vec<f64>) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(EmbeddingVector { values: values.into_iter().map(|v| v / norm).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product, which is the cosine for unit vectors. Clamped to [-1, 1].
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

/// Sort key for similarity scores. Scores within 1e-9 of each other rank
/// as ties so float noise never decides an ordering.
pub(crate) fn similarity_rank(score: f64) -> i64 {
    (score * 1e9).round() as i64
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("script exhausted after {steps} step(s)")]
    ScriptExhausted { steps: usize },
    #[error("script step {step}: expected {expected}, got {actual}")]
    ScriptMismatch { step: usize, expected: String, actual: String },
    #[error("prompt of ~{tokens} tokens exceeds the provider limit of {limit}")]
    ContextOverflow { tokens: u32, limit: u32 },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError>;
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        (**self).embed(text)
    }
}

/// Rough token count: four characters per token.
pub fn estimate_tokens(text: &str) -> u32 {
    (text.chars().count() as u32).div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_requires_messages() {
        assert!(matches!(ChatRequest::new(vec![]), Err(LlmError::InvalidRequest(_))));
        let req = ChatRequest::new(vec![ChatMessage::system("s"), ChatMessage::user("u")]).unwrap();
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.last_role(), Some(MessageRole::User));
    }

    #[test]
    fn normalization() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0]).unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_none());
        assert!((v.cosine(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn message_json_shape() {
        let json = serde_json::to_string(&ChatMessage::user("hi")).unwrap();
        assert_eq!(json, r#"{"role":"user","content":"hi"}"#);
    }
}
