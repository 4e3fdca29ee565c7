use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{ChatRequest, ChatResponse, EmbeddingProvider, LlmClient, ProviderError};
use crate::vectorops::Embedding;

/// Retries on network errors and 5xx responses only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    /// Backoff multiplier between consecutive retries.
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    /// Two retries after 100ms and 400ms.
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_millis(100),
            multiplier: 4,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff * self.multiplier.saturating_pow(retry)
    }

    pub async fn run<T, F, Fut>(&self, mut attempt: F) -> Result<T, ProviderError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, ProviderError>>,
    {
        let mut retry = 0;
        loop {
            match attempt().await {
                Err(e) if e.is_retryable() && retry < self.max_retries => {
                    tracing::warn!(error = %e, retry, "upstream call failed, retrying");
                    tokio::time::sleep(self.backoff(retry)).await;
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

fn client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client construction")
}

/// POSTs `body` and returns the parsed JSON response, classifying failures.
async fn post_json(
    http: &reqwest::Client,
    cfg: &RemoteConfig,
    url: &str,
    body: &Value,
) -> Result<Value, ProviderError> {
    let mut req = http.post(url).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .await
        .map_err(|e| ProviderError::UpstreamUnavailable(e.to_string()))?;
    let status = resp.status();
    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
        return Err(ProviderError::AuthFailure(status.as_u16()));
    }
    if status.is_server_error() {
        return Err(ProviderError::UpstreamUnavailable(format!("HTTP {status}")));
    }
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| ProviderError::UpstreamUnavailable(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::SchemaError(format!(
            "HTTP {status}: {}",
            String::from_utf8_lossy(&bytes)
        )));
    }
    serde_json::from_slice(&bytes).map_err(|e| ProviderError::SchemaError(format!("invalid JSON: {e}")))
}

/// Embeddings over `POST {base_url}/embeddings`.
pub struct RemoteEmbedder {
    cfg: RemoteConfig,
    dim: usize,
    http: reqwest::Client,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig, dim: usize) -> Self {
        let http = client(cfg.timeout);
        Self { cfg, dim, http }
    }

    fn parse(&self, body: &Value) -> Result<Embedding, ProviderError> {
        let values = body
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::SchemaError("missing data[0].embedding".into()))?;
        let values: Vec<f64> = values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::SchemaError("non-numeric embedding value".into())))
            .collect::<Result<_, _>>()?;
        if values.len() != self.dim {
            return Err(ProviderError::SchemaError(format!(
                "expected {} embedding values, got {}",
                self.dim,
                values.len()
            )));
        }
        Embedding::new(values).map_err(|e| ProviderError::SchemaError(e.to_string()))
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let url = self.cfg.url("embeddings");
        let body = json!({ "model": self.cfg.model, "input": text });
        let resp = self
            .cfg
            .retry
            .run(|| post_json(&self.http, &self.cfg, &url, &body))
            .await?;
        self.parse(&resp)
    }
}

/// Chat completions over `POST {base_url}/chat/completions`.
///
/// The request is forwarded as received, including its `model` field and any
/// fields this crate does not model. `cfg.model` is only used when the request
/// leaves `model` empty.
pub struct RemoteLlm {
    cfg: RemoteConfig,
    http: reqwest::Client,
    calls: AtomicU64,
}

impl RemoteLlm {
    pub fn new(cfg: RemoteConfig) -> Self {
        let http = client(cfg.timeout);
        Self {
            cfg,
            http,
            calls: AtomicU64::new(0),
        }
    }
}

#[async_trait]
impl LlmClient for RemoteLlm {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let mut body = serde_json::to_value(request)
            .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        if request.model.is_empty() {
            body["model"] = Value::String(self.cfg.model.clone());
        }
        let url = self.cfg.url("chat/completions");
        let started = Instant::now();
        let resp = self
            .cfg
            .retry
            .run(|| post_json(&self.http, &self.cfg, &url, &body))
            .await?;
        let upstream_latency = started.elapsed();
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::SchemaError("missing choices[0].message.content".into()))?;
        Ok(ChatResponse {
            content: content.to_owned(),
            upstream_latency,
        })
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}
