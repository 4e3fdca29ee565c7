//! Systems under test: an in-process engine or a running gateway.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use semgate_core::clock::{Clock, SystemClock};
use semgate_core::providers::{ChatRequest, MockEmbedder, MockLlm};
use semgate_core::vectorops::normalize;
use semgate_core::{Engine, EngineConfig, HnswParams, SemanticStore};
use serde_json::{json, Value};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub hit: bool,
    pub matched_entry: Option<String>,
    pub matched_question: Option<String>,
}

#[async_trait]
pub trait Target: Send + Sync {
    /// Stores a known question/answer pair, returning its entry id.
    async fn put(&self, question: &str, answer: &str) -> Result<String, BenchError>;
    async fn query(&self, text: &str) -> Result<QueryResult, BenchError>;
    /// Sends the query straight to the upstream model, skipping the cache.
    async fn query_uncached(&self, text: &str) -> Result<(), BenchError>;
    async fn flush(&self) -> Result<usize, BenchError>;
    async fn set_threshold(&self, t: f64) -> Result<f64, BenchError>;
    async fn entry_count(&self) -> Result<usize, BenchError>;
    /// Upstream completion calls so far, when observable.
    fn upstream_calls(&self) -> Option<u64>;
}

pub struct EmbeddedTarget {
    engine: Arc<Engine>,
}

impl EmbeddedTarget {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self { engine }
    }

    /// Engine over mock providers with the given upstream delay.
    pub fn mock(params: HnswParams, threshold: f64, llm_delay: Duration, clock: Arc<dyn Clock>) -> Result<Self, BenchError> {
        let store = Arc::new(SemanticStore::new(params, clock));
        Self::mock_with_store(store, threshold, llm_delay)
    }

    pub fn mock_with_store(store: Arc<SemanticStore>, threshold: f64, llm_delay: Duration) -> Result<Self, BenchError> {
        let config = EngineConfig {
            similarity_threshold: threshold,
            ..EngineConfig::default()
        };
        let engine = Engine::new(
            config,
            store,
            Arc::new(MockEmbedder),
            Arc::new(MockLlm::with_delay(llm_delay)),
        )
        .map_err(|e| BenchError::Validation(e.to_string()))?;
        Ok(Self::new(Arc::new(engine)))
    }

    pub fn default_mock(threshold: f64, llm_delay: Duration) -> Result<Self, BenchError> {
        Self::mock(HnswParams::default(), threshold, llm_delay, Arc::new(SystemClock))
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

fn unavailable(e: impl std::fmt::Display) -> BenchError {
    BenchError::TargetUnavailable(e.to_string())
}

#[async_trait]
impl Target for EmbeddedTarget {
    async fn put(&self, question: &str, answer: &str) -> Result<String, BenchError> {
        let raw = self.engine.embedder().embed(question).await.map_err(unavailable)?;
        let unit = normalize(&raw).map_err(unavailable)?;
        let id = self
            .engine
            .store()
            .put(question, &unit, answer, None)
            .map_err(|e| BenchError::Validation(e.to_string()))?;
        Ok(id.to_string())
    }

    async fn query(&self, text: &str) -> Result<QueryResult, BenchError> {
        let o = self.engine.handle_query(text, None).await.map_err(unavailable)?;
        Ok(QueryResult {
            hit: o.is_hit(),
            matched_entry: o.matched_entry.map(|id| id.to_string()),
            matched_question: o.matched_question,
        })
    }

    async fn query_uncached(&self, text: &str) -> Result<(), BenchError> {
        let request = ChatRequest::user(EngineConfig::default().model, text);
        self.engine.bypass(&request).await.map_err(unavailable)?;
        Ok(())
    }

    async fn flush(&self) -> Result<usize, BenchError> {
        Ok(self.engine.store().clear())
    }

    async fn set_threshold(&self, t: f64) -> Result<f64, BenchError> {
        self.engine
            .set_threshold(t)
            .map_err(|e| BenchError::Validation(e.to_string()))
    }

    async fn entry_count(&self) -> Result<usize, BenchError> {
        Ok(self.engine.store().len())
    }

    fn upstream_calls(&self) -> Option<u64> {
        Some(self.engine.llm().call_count())
    }
}

/// A gateway reached over HTTP.
pub struct HttpTarget {
    base: String,
    http: reqwest::Client,
}

impl HttpTarget {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    async fn post(&self, path: &str, body: Value, bypass: bool) -> Result<reqwest::Response, BenchError> {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(&body);
        if bypass {
            req = req.header("x-semantic-cache-bypass", "true");
        }
        let resp = req.send().await.map_err(unavailable)?;
        if resp.status().is_success() {
            Ok(resp)
        } else {
            let status = resp.status();
            let text = resp.text().await.unwrap_or_default();
            let err = format!("{path} returned {status}: {text}");
            Err(if status.is_client_error() {
                BenchError::Validation(err)
            } else {
                BenchError::TargetUnavailable(err)
            })
        }
    }

    async fn post_json(&self, path: &str, body: Value) -> Result<Value, BenchError> {
        self.post(path, body, false).await?.json().await.map_err(unavailable)
    }

    fn chat(text: &str) -> Value {
        json!({"messages": [{"role": "user", "content": text}]})
    }
}

#[async_trait]
impl Target for HttpTarget {
    async fn put(&self, question: &str, answer: &str) -> Result<String, BenchError> {
        let v = self
            .post_json("/admin/entries", json!({"question": question, "response": answer}))
            .await?;
        v["entry_id"]
            .as_u64()
            .map(|id| id.to_string())
            .ok_or_else(|| unavailable(format!("unexpected /admin/entries reply {v}")))
    }

    async fn query(&self, text: &str) -> Result<QueryResult, BenchError> {
        let resp = self.post("/v1/chat/completions", Self::chat(text), false).await?;
        let header = |name: &str| {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_owned)
        };
        let hit = header("x-semantic-cache").as_deref() == Some("hit");
        let matched_entry = header("x-semantic-cache-entry");
        resp.bytes().await.map_err(unavailable)?;
        Ok(QueryResult {
            hit,
            matched_entry,
            matched_question: None,
        })
    }

    async fn query_uncached(&self, text: &str) -> Result<(), BenchError> {
        let resp = self.post("/v1/chat/completions", Self::chat(text), true).await?;
        resp.bytes().await.map_err(unavailable)?;
        Ok(())
    }

    async fn flush(&self) -> Result<usize, BenchError> {
        let v = self.post_json("/admin/flush", json!({})).await?;
        Ok(v["removed"].as_u64().unwrap_or(0) as usize)
    }

    async fn set_threshold(&self, t: f64) -> Result<f64, BenchError> {
        let v = self.post_json("/admin/threshold", json!({"threshold": t})).await?;
        Ok(v["previous"].as_f64().unwrap_or(f64::NAN))
    }

    async fn entry_count(&self) -> Result<usize, BenchError> {
        let resp = self
            .http
            .get(format!("{}/admin/stats", self.base))
            .send()
            .await
            .map_err(unavailable)?;
        let v: Value = resp.json().await.map_err(unavailable)?;
        Ok(v["entries"].as_u64().unwrap_or(0) as usize)
    }

    fn upstream_calls(&self) -> Option<u64> {
        None
    }
}
