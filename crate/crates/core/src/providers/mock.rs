use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;

use super::{ChatRequest, ChatResponse, EmbeddingProvider, LlmClient, ProviderError};
use crate::vectorops::Embedding;

/// Dimension of [`mock_embed`] vectors.
pub const MOCK_DIM: usize = 64;

/// Function words ignored by [`mock_embed`].
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "at", "be", "by", "can", "could", "do", "does", "for", "how", "i",
    "in", "is", "it", "me", "my", "of", "on", "or", "please", "should", "the", "to", "what",
    "with", "would", "you", "your",
];

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric tokens of `text`, stopwords included.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Bag-of-hashed-tokens embedding.
///
/// Content tokens (non-stopwords) are hashed into [`MOCK_DIM`] buckets, each
/// occurrence adding 1, and the count vector is normalized. Texts with the same
/// content-token multiset therefore embed identically regardless of order or
/// function words.
pub fn mock_embed(text: &str) -> Result<Embedding, ProviderError> {
    let mut counts = vec![0.0f64; MOCK_DIM];
    let mut any = false;
    for token in tokenize(text) {
        if STOPWORDS.contains(&token.as_str()) {
            continue;
        }
        let bucket = (fnv1a64(token.as_bytes()) % MOCK_DIM as u64) as usize;
        counts[bucket] += 1.0;
        any = true;
    }
    if !any {
        return Err(ProviderError::EmptyText);
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    Embedding::new(counts.into_iter().map(|c| c / norm).collect())
        .map_err(|e| ProviderError::SchemaError(e.to_string()))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MockEmbedder;

#[async_trait]
impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        MOCK_DIM
    }

    async fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        mock_embed(text)
    }
}

/// Deterministic completion stand-in: answers `ANSWER(<hash of question>)`.
#[derive(Debug, Default)]
pub struct MockLlm {
    delay: Duration,
    calls: AtomicU64,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(delay: Duration) -> Self {
        Self {
            delay,
            calls: AtomicU64::new(0),
        }
    }

    pub fn answer_for(question: &str) -> String {
        format!("ANSWER({:016x})", fnv1a64(question.as_bytes()))
    }
}

#[async_trait]
impl LlmClient for MockLlm {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        request.validate()?;
        let question = request
            .last_user_text()
            .ok_or_else(|| ProviderError::InvalidRequest("last user message has no text".into()))?;
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        Ok(ChatResponse {
            content: Self::answer_for(&question),
            upstream_latency: started.elapsed(),
        })
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}
