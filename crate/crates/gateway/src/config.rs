//! Gateway configuration: one JSON file plus `SEMGATE_*` environment overrides.
//!
//! An override variable names a config path in upper case with the section and
//! key joined by `_`, e.g. `SEMGATE_CACHE_THRESHOLD=0.75` or
//! `SEMGATE_UPSTREAM_BASE_URL=https://api.openai.com/v1`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use semgate_core::ann::HnswParams;
use semgate_core::engine::{DEFAULT_THRESHOLD, DEFAULT_TOP_K};
use semgate_core::store::DEFAULT_TTL_SECS;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::GatewayError;

pub const ENV_PREFIX: &str = "SEMGATE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpstreamConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub api_key: Option<String>,
    /// Model used when a client request omits one.
    pub model: String,
    pub timeout_secs: u64,
    /// Artificial latency of the mock upstream.
    pub mock_delay_ms: u64,
}

impl Default for UpstreamConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Remote,
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4o-mini".into(),
            timeout_secs: 120,
            mock_delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    /// Falls back to the upstream key when unset.
    pub api_key: Option<String>,
    pub model: String,
    pub dim: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "text-embedding-ada-002".into(),
            dim: 1536,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub threshold: f64,
    pub default_ttl_secs: u64,
    pub snapshot_path: Option<PathBuf>,
    pub purge_interval_secs: u64,
    pub top_k: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            default_ttl_secs: DEFAULT_TTL_SECS,
            snapshot_path: None,
            purge_interval_secs: 60,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HnswConfig {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswConfig {
    fn default() -> Self {
        let p = HnswParams::default();
        Self {
            m: p.m,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            seed: p.seed,
        }
    }
}

impl HnswConfig {
    pub fn params(&self) -> HnswParams {
        HnswParams {
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            seed: self.seed,
            ..HnswParams::with_m(self.m)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: String,
    pub upstream: UpstreamConfig,
    pub embedding: EmbeddingConfig,
    pub cache: CacheConfig,
    pub hnsw: HnswConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            upstream: UpstreamConfig::default(),
            embedding: EmbeddingConfig::default(),
            cache: CacheConfig::default(),
            hnsw: HnswConfig::default(),
        }
    }
}

impl GatewayConfig {
    /// Reads `path` (if given), then applies overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, GatewayError> {
        let file = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| GatewayError::Config(format!("reading {}: {e}", p.display())))?;
                Some(
                    serde_json::from_str::<Value>(&raw)
                        .map_err(|e| GatewayError::Config(format!("parsing {}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        Self::from_parts(file, std::env::vars())
    }

    /// Merges a parsed config file and `(name, value)` environment pairs over the defaults.
    pub fn from_parts(
        file: Option<Value>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, GatewayError> {
        let mut merged = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(file) = file {
            merge(&mut merged, file);
        }
        for (name, value) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            apply_override(&mut merged, &rest.to_ascii_lowercase(), &value)?;
        }
        let cfg: Self = serde_json::from_value(merged)
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.cache.threshold) {
            return Err(GatewayError::Config(format!(
                "cache.threshold must be in [0, 1], got {}",
                self.cache.threshold
            )));
        }
        if self.cache.purge_interval_secs == 0 {
            return Err(GatewayError::Config("cache.purge_interval_secs must be positive".into()));
        }
        if self.embedding.dim == 0 {
            return Err(GatewayError::Config("embedding.dim must be positive".into()));
        }
        self.hnsw
            .params()
            .validate()
            .map_err(|e| GatewayError::Config(format!("hnsw: {e}")))
    }

    pub fn purge_interval(&self) -> Duration {
        Duration::from_secs(self.cache.purge_interval_secs)
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `key` is the lowercased variable name without prefix, e.g. `cache_default_ttl_secs`.
fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), GatewayError> {
    let obj = root.as_object_mut().expect("config root is an object");
    let (section, field) = match key.split_once('_') {
        Some((s, f)) if obj.get(s).is_some_and(Value::is_object) => (s, Some(f)),
        _ => (key, None),
    };
    let slot = match field {
        None => obj.get_mut(section),
        Some(f) => obj.get_mut(section).and_then(|s| s.get_mut(f)),
    }
    .ok_or_else(|| GatewayError::Config(format!("unknown override {ENV_PREFIX}{}", key.to_uppercase())))?;
    *slot = match slot {
        Value::Number(_) | Value::Bool(_) => serde_json::from_str(raw).map_err(|_| {
            GatewayError::Config(format!("{ENV_PREFIX}{}: cannot parse {raw:?}", key.to_uppercase()))
        })?,
        Value::Null | Value::String(_) => Value::String(raw.to_owned()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned())),
    };
    Ok(())
}
