//! Deterministic bag-of-words embedding used offline and in tests.

use super::{Embedder, EmbeddingVector, LlmError};

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalHashEmbedder {
    dimension: usize,
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        LocalHashEmbedder { dimension: DEFAULT_EMBEDDING_DIM }
    }
}

impl LocalHashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        LocalHashEmbedder { dimension }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for LocalHashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(LlmError::EmptyText);
        }
        let lower = trimmed.to_lowercase();
        let mut tokens: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        // punctuation-only text still gets a vector
        if tokens.is_empty() {
            tokens.push(&lower);
        }
        let mut values = vec![0.0; self.dimension];
        for token in tokens {
            values[(fnv1a(token.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        Ok(EmbeddingVector::normalized(values).expect("at least one token was hashed"))
    }
}
