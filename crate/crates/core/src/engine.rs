//! Query handling: embed, search, threshold, then serve from cache or call the
//! upstream model and remember its answer.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::providers::{ChatRequest, ChatResponse, EmbeddingProvider, LlmClient, ProviderError};
use crate::store::{SemanticStore, StoreError, DEFAULT_TTL_SECS};
use crate::vectorops::normalize;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_TOP_K: usize = 5;
/// Width of the similarity histogram buckets over `[0, 1]`.
pub const HISTOGRAM_BUCKET: f64 = 0.05;
const HISTOGRAM_BUCKETS: usize = 20;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding failed: {0}")]
    EmbeddingFailed(ProviderError),
    #[error("upstream completion failed: {0}")]
    UpstreamFailed(ProviderError),
    #[error("threshold {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub similarity_threshold: f64,
    pub top_k: usize,
    pub default_ttl_secs: u64,
    /// Model name used for requests built from a bare question.
    pub model: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: DEFAULT_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            default_ttl_secs: DEFAULT_TTL_SECS,
            model: "gpt-4o-mini".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Hit,
    Miss,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Hit => "hit",
            OutcomeKind::Miss => "miss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupOutcome {
    pub kind: OutcomeKind,
    pub response: String,
    /// Similarity of the matched entry (hits only).
    pub similarity: Option<f64>,
    pub matched_entry: Option<u64>,
    pub matched_question: Option<String>,
    /// Best candidate similarity seen, whether or not it cleared the threshold.
    pub best_similarity: Option<f64>,
    /// Entry created for the fresh response (misses only).
    pub stored_entry: Option<u64>,
    pub elapsed: Duration,
    pub upstream_called: bool,
}

impl LookupOutcome {
    pub fn is_hit(&self) -> bool {
        self.kind == OutcomeKind::Hit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles over the given samples (milliseconds).
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Self {
            count: sorted.len() as u64,
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EngineMetrics {
    pub hits: u64,
    pub misses: u64,
    pub hit_latency: LatencySummary,
    pub miss_latency: LatencySummary,
    /// Counts of best-candidate similarity per 0.05-wide bucket over `[0, 1]`;
    /// negative similarities land in the first bucket.
    pub similarity_histogram: Vec<u64>,
}

impl EngineMetrics {
    pub fn total(&self) -> u64 {
        self.hits + self.misses
    }

    /// `hits / (hits + misses)`, or 0 before any query.
    pub fn hit_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.hits as f64 / t as f64,
        }
    }
}

#[derive(Debug, Default)]
struct MetricsState {
    hits: u64,
    misses: u64,
    hit_ms: Vec<f64>,
    miss_ms: Vec<f64>,
    histogram: [u64; HISTOGRAM_BUCKETS],
}

fn histogram_bucket(similarity: f64) -> usize {
    ((similarity.max(0.0) / HISTOGRAM_BUCKET) as usize).min(HISTOGRAM_BUCKETS - 1)
}

pub struct Engine {
    store: Arc<SemanticStore>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmClient>,
    threshold_bits: AtomicU64,
    top_k: usize,
    default_ttl_secs: u64,
    model: String,
    metrics: Mutex<MetricsState>,
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        store: Arc<SemanticStore>,
        embedder: Arc<dyn EmbeddingProvider>,
        llm: Arc<dyn LlmClient>,
    ) -> Result<Self, EngineError> {
        check_threshold(config.similarity_threshold)?;
        Ok(Self {
            store,
            embedder,
            llm,
            threshold_bits: AtomicU64::new(config.similarity_threshold.to_bits()),
            top_k: config.top_k.max(1),
            default_ttl_secs: config.default_ttl_secs,
            model: config.model,
            metrics: Mutex::new(MetricsState::default()),
        })
    }

    pub fn store(&self) -> &Arc<SemanticStore> {
        &self.store
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn llm(&self) -> &Arc<dyn LlmClient> {
        &self.llm
    }

    pub fn threshold(&self) -> f64 {
        f64::from_bits(self.threshold_bits.load(Ordering::SeqCst))
    }

    /// Replaces the similarity threshold, returning the previous one.
    pub fn set_threshold(&self, t: f64) -> Result<f64, EngineError> {
        check_threshold(t)?;
        Ok(f64::from_bits(self.threshold_bits.swap(t.to_bits(), Ordering::SeqCst)))
    }

    /// Answers a bare question.
    pub async fn handle_query(
        &self,
        question: &str,
        ttl_secs: Option<u64>,
    ) -> Result<LookupOutcome, EngineError> {
        self.handle_request(&ChatRequest::user(self.model.clone(), question), ttl_secs)
            .await
    }

    /// Answers a chat request, keyed on its last user message.
    ///
    /// On a miss the request is forwarded to the upstream client unchanged and
    /// the answer is stored. Upstream failures are returned without touching
    /// the cache.
    pub async fn handle_request(
        &self,
        request: &ChatRequest,
        ttl_secs: Option<u64>,
    ) -> Result<LookupOutcome, EngineError> {
        let started = Instant::now();
        request
            .validate()
            .map_err(|e| EngineError::InvalidRequest(e.to_string()))?;
        let question = request
            .last_user_text()
            .filter(|q| !q.trim().is_empty())
            .ok_or(EngineError::EmptyQuestion)?;

        let raw = self
            .embedder
            .embed(&question)
            .await
            .map_err(EngineError::EmbeddingFailed)?;
        let query = normalize(&raw)
            .map_err(|e| EngineError::EmbeddingFailed(ProviderError::SchemaError(e.to_string())))?;

        let threshold = self.threshold();
        let best = self.store.nearest(&query, self.top_k).into_iter().next();
        let best_similarity = best.as_ref().map(|(_, s)| *s);

        if let Some((entry, similarity)) = best.filter(|(_, s)| *s >= threshold) {
            let outcome = LookupOutcome {
                kind: OutcomeKind::Hit,
                response: entry.response,
                similarity: Some(similarity),
                matched_entry: Some(entry.entry_id),
                matched_question: Some(entry.question),
                best_similarity,
                stored_entry: None,
                elapsed: started.elapsed(),
                upstream_called: false,
            };
            self.record(&outcome);
            return Ok(outcome);
        }

        let answer = self
            .llm
            .complete(request)
            .await
            .map_err(EngineError::UpstreamFailed)?;
        let ttl = ttl_secs.unwrap_or(self.default_ttl_secs);
        let id = self.store.put(&question, &query, &answer.content, Some(ttl))?;
        let outcome = LookupOutcome {
            kind: OutcomeKind::Miss,
            response: answer.content,
            similarity: None,
            matched_entry: None,
            matched_question: None,
            best_similarity,
            stored_entry: Some(id),
            elapsed: started.elapsed(),
            upstream_called: true,
        };
        self.record(&outcome);
        Ok(outcome)
    }

    /// Calls the upstream model directly, skipping lookup and storage.
    /// Not counted in [`metrics_snapshot`](Self::metrics_snapshot).
    pub async fn bypass(&self, request: &ChatRequest) -> Result<(ChatResponse, Duration), EngineError> {
        let started = Instant::now();
        let answer = self
            .llm
            .complete(request)
            .await
            .map_err(EngineError::UpstreamFailed)?;
        Ok((answer, started.elapsed()))
    }

    fn record(&self, outcome: &LookupOutcome) {
        let ms = outcome.elapsed.as_secs_f64() * 1000.0;
        let mut m = self.metrics.lock();
        match outcome.kind {
            OutcomeKind::Hit => {
                m.hits += 1;
                m.hit_ms.push(ms);
            }
            OutcomeKind::Miss => {
                m.misses += 1;
                m.miss_ms.push(ms);
            }
        }
        if let Some(s) = outcome.best_similarity {
            m.histogram[histogram_bucket(s)] += 1;
        }
    }

    pub fn metrics_snapshot(&self) -> EngineMetrics {
        let m = self.metrics.lock();
        EngineMetrics {
            hits: m.hits,
            misses: m.misses,
            hit_latency: LatencySummary::from_samples(&m.hit_ms),
            miss_latency: LatencySummary::from_samples(&m.miss_ms),
            similarity_histogram: m.histogram.to_vec(),
        }
    }

    pub fn reset_metrics(&self) {
        *self.metrics.lock() = MetricsState::default();
    }
}

fn check_threshold(t: f64) -> Result<(), EngineError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(EngineError::OutOfRange(t))
    }
}
