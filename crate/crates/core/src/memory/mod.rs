//! Per-session dialogue history and relevance-filtered recall.

mod store;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{similarity_rank, Embedder, EmbeddingVector, LlmError};

pub use store::{InMemorySessionStore, SessionStore, SqliteSessionStore};

pub const DEFAULT_RECALL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(&self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub turn_id: u64,
    pub speaker: Speaker,
    pub text: String,
    /// User turns only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
    pub instant: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<ChatTurn>,
}

/// A user turn with the assistant turn that answered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalledPair {
    pub question: ChatTurn,
    pub answer: ChatTurn,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("session '{0}' already exists")]
    DuplicateSession(String),
    #[error("session '{0}' not found")]
    UnknownSession(String),
    #[error("cannot embed question: {0}")]
    Embedding(#[from] LlmError),
    #[error("session storage error: {0}")]
    Storage(String),
}

impl From<rusqlite::Error> for MemoryError {
    fn from(e: rusqlite::Error) -> Self {
        MemoryError::Storage(e.to_string())
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    turn_id: u64,
    speaker: Speaker,
    text: &'a str,
    instant: DateTime<Utc>,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        ChatSession { session_id: session_id.into(), created_at, turns: Vec::new() }
    }

    fn next_turn_id(&self) -> u64 {
        self.turns.last().map_or(1, |t| t.turn_id + 1)
    }

    /// Appends the question and its answer. The session is unchanged on error.
    pub fn commit(
        &mut self,
        question: &str,
        answer: &str,
        embedder: &dyn Embedder,
        now: DateTime<Utc>,
    ) -> Result<(), MemoryError> {
        let embedding = embedder.embed(question)?;
        let id = self.next_turn_id();
        self.turns.push(ChatTurn {
            turn_id: id,
            speaker: Speaker::User,
            text: question.to_string(),
            embedding: Some(embedding),
            instant: now,
        });
        self.turns.push(ChatTurn {
            turn_id: id + 1,
            speaker: Speaker::Assistant,
            text: answer.to_string(),
            embedding: None,
            instant: now,
        });
        Ok(())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&ChatTurn, &ChatTurn)> {
        self.turns.chunks_exact(2).map(|pair| (&pair[0], &pair[1]))
    }

    pub fn pair_count(&self) -> usize {
        self.turns.len() / 2
    }

    /// Turns alternate user/assistant, starting with user, ids increasing.
    pub fn is_well_formed(&self) -> bool {
        self.turns.len() % 2 == 0
            && self.turns.iter().enumerate().all(|(i, t)| {
                t.speaker == if i % 2 == 0 { Speaker::User } else { Speaker::Assistant }
            })
            && self.turns.windows(2).all(|w| w[0].turn_id < w[1].turn_id)
    }

    /// The `m` earlier pairs most similar to `question`, oldest first.
    /// Equal scores favour the more recent pair.
    pub fn recall(&self, question: &str, m: usize, embedder: &dyn Embedder) -> Result<Vec<RecalledPair>, LlmError> {
        if m == 0 || self.turns.is_empty() || question.trim().is_empty() {
            return Ok(Vec::new());
        }
        let query = embedder.embed(question)?;
        let mut scored: Vec<(f64, usize)> = self
            .pairs()
            .enumerate()
            .map(|(i, (user, _))| {
                let score = match &user.embedding {
                    Some(e) => e.cosine(&query),
                    None => embedder.embed(&user.text).map(|e| e.cosine(&query)).unwrap_or(0.0),
                };
                (score, i)
            })
            .collect();
        scored.sort_by(|a, b| similarity_rank(b.0).cmp(&similarity_rank(a.0)).then_with(|| b.1.cmp(&a.1)));
        let mut chosen: Vec<usize> = scored.into_iter().take(m).map(|(_, i)| i).collect();
        chosen.sort_unstable();
        Ok(chosen
            .into_iter()
            .map(|i| RecalledPair { question: self.turns[2 * i].clone(), answer: self.turns[2 * i + 1].clone() })
            .collect())
    }

    /// JSON transcript without embeddings.
    pub fn export_transcript(&self) -> serde_json::Value {
        let turns: Vec<TranscriptLine<'_>> = self
            .turns
            .iter()
            .map(|t| TranscriptLine { turn_id: t.turn_id, speaker: t.speaker, text: &t.text, instant: t.instant })
            .collect();
        serde_json::json!({
            "session_id": self.session_id,
            "created_at": self.created_at,
            "turns": turns,
        })
    }
}

/// Plain-text digest of recalled pairs for prompts.
pub fn format_recalled(pairs: &[RecalledPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("User: {}\nAssistant: {}", p.question.text, p.answer.text))
        .collect::<Vec<_>>()
        .join("\n")
}
