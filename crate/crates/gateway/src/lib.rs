//! Semantic caching gateway for chat-completions APIs.
//!
//! [`Gateway::from_config`] wires providers, store and engine together (loading
//! a snapshot when one is configured), and [`Gateway::serve`] runs the HTTP
//! service with a background TTL sweep until the shutdown future resolves, then
//! writes the snapshot back.

pub mod config;
pub mod server;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use semgate_core::clock::{Clock, SystemClock};
use semgate_core::engine::{Engine, EngineConfig};
use semgate_core::providers::{
    EmbeddingProvider, LlmClient, MockEmbedder, MockLlm, RemoteConfig, RemoteEmbedder, RemoteLlm,
};
use semgate_core::store::{SemanticStore, StoreError};
use thiserror::Error;
use tokio::net::TcpListener;

pub use config::GatewayConfig;
use config::ProviderKind;
pub use server::{router, AppState};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot load snapshot {path}: {source}")]
    Snapshot { path: PathBuf, source: StoreError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct Gateway {
    engine: Arc<Engine>,
    snapshot_path: Option<PathBuf>,
    purge_interval: Duration,
}

impl Gateway {
    pub fn from_config(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        Self::from_config_with_clock(cfg, Arc::new(SystemClock))
    }

    pub fn from_config_with_clock(cfg: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let params = cfg.hnsw.params();
        let store = match &cfg.cache.snapshot_path {
            Some(path) if path.exists() => {
                let store = SemanticStore::snapshot_load(path, params, clock).map_err(|source| {
                    GatewayError::Snapshot {
                        path: path.clone(),
                        source,
                    }
                })?;
                tracing::info!(path = %path.display(), entries = store.len(), "snapshot loaded");
                store
            }
            _ => SemanticStore::new(params, clock),
        }
        .with_default_ttl(cfg.cache.default_ttl_secs);

        let engine = Engine::new(
            EngineConfig {
                similarity_threshold: cfg.cache.threshold,
                top_k: cfg.cache.top_k,
                default_ttl_secs: cfg.cache.default_ttl_secs,
                model: cfg.upstream.model.clone(),
            },
            Arc::new(store),
            embedder(cfg),
            llm(cfg),
        )
        .map_err(|e| GatewayError::Config(e.to_string()))?;

        Ok(Self {
            engine: Arc::new(engine),
            snapshot_path: cfg.cache.snapshot_path.clone(),
            purge_interval: cfg.purge_interval(),
        })
    }

    /// Wraps an existing engine, e.g. one built with mock providers in tests.
    pub fn with_engine(engine: Arc<Engine>) -> Self {
        Self {
            engine,
            snapshot_path: None,
            purge_interval: Duration::from_secs(60),
        }
    }

    pub fn with_snapshot_path(mut self, path: Option<PathBuf>) -> Self {
        self.snapshot_path = path;
        self
    }

    pub fn with_purge_interval(mut self, every: Duration) -> Self {
        self.purge_interval = every;
        self
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn router(&self) -> axum::Router {
        router(AppState::new(self.engine.clone()))
    }

    /// Writes the snapshot if a path is configured; returns bytes written.
    pub fn save_snapshot(&self) -> Result<Option<u64>, StoreError> {
        match &self.snapshot_path {
            Some(p) => self.engine.store().snapshot_save(p).map(Some),
            None => Ok(None),
        }
    }

    /// Serves until `shutdown` resolves, then saves the snapshot.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> Result<(), GatewayError> {
        let store = self.engine.store().clone();
        let every = self.purge_interval;
        let purger = tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            tick.tick().await;
            loop {
                tick.tick().await;
                let removed = store.purge_expired();
                if removed > 0 {
                    tracing::debug!(removed, "purged expired entries");
                }
            }
        });

        tracing::info!(addr = %listener.local_addr()?, "gateway listening");
        let result = axum::serve(listener, self.router())
            .with_graceful_shutdown(shutdown)
            .await;
        purger.abort();
        result?;

        if let Some(bytes) = self
            .save_snapshot()
            .map_err(|e| GatewayError::Io(std::io::Error::other(e.to_string())))?
        {
            tracing::info!(bytes, "snapshot written");
        }
        Ok(())
    }
}

fn embedder(cfg: &GatewayConfig) -> Arc<dyn EmbeddingProvider> {
    let e = &cfg.embedding;
    match e.kind {
        ProviderKind::Mock => Arc::new(MockEmbedder),
        ProviderKind::Remote => {
            let key = e.api_key.clone().or_else(|| cfg.upstream.api_key.clone());
            let remote = RemoteConfig::new(&e.base_url, &e.model)
                .with_api_key(key)
                .with_timeout(Duration::from_secs(e.timeout_secs));
            Arc::new(RemoteEmbedder::new(remote, e.dim))
        }
    }
}

fn llm(cfg: &GatewayConfig) -> Arc<dyn LlmClient> {
    let u = &cfg.upstream;
    match u.kind {
        ProviderKind::Mock => Arc::new(MockLlm::with_delay(Duration::from_millis(u.mock_delay_ms))),
        ProviderKind::Remote => {
            let remote = RemoteConfig::new(&u.base_url, &u.model)
                .with_api_key(u.api_key.clone())
                .with_timeout(Duration::from_secs(u.timeout_secs));
            Arc::new(RemoteLlm::new(remote))
        }
    }
}
