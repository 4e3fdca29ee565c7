//! Core of a semantic caching layer for LLM APIs.
//!
//! Queries are embedded, looked up in a dimension-partitioned HNSW-backed
//! store, and answered from cache when the best match clears a cosine
//! similarity threshold. Everything else is forwarded to the upstream model
//! and the answer is cached with a TTL.

pub mod ann;
pub mod clock;
pub mod engine;
pub mod providers;
pub mod store;
pub mod vectorops;

pub use ann::{HnswIndex, HnswParams, NodeId, SearchHit};
pub use clock::{Clock, ManualClock, SystemClock};
pub use engine::{Engine, EngineConfig, EngineError, EngineMetrics, LookupOutcome, OutcomeKind};
pub use store::{CacheEntry, SemanticStore, StoreError};
pub use vectorops::{cosine_similarity, dot, normalize, Embedding, UnitEmbedding, VectorError};
