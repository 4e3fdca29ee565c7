//! Dimension-partitioned semantic cache store with TTL expiry.
//!
//! Every embedding dimension gets its own [`Partition`], which pairs an HNSW
//! index with the entries it points at. Expired entries are filtered lazily on
//! read and physically removed by [`SemanticStore::purge_expired`], which also
//! compacts an index once more than [`REBUILD_TOMBSTONE_RATIO`] of its nodes are
//! tombstones.

mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;

use crate::ann::{HnswIndex, HnswParams, NodeId};
use crate::clock::Clock;
use crate::vectorops::{normalize, Embedding, UnitEmbedding, VectorError};

pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Entries live for a day unless told otherwise.
pub const DEFAULT_TTL_SECS: u64 = 24 * 60 * 60;

/// Tombstone fraction above which a purge rebuilds a partition's index.
pub const REBUILD_TOMBSTONE_RATIO: f64 = 0.3;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("snapshot I/O failed: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

/// A cached question/response pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub entry_id: u64,
    pub question: String,
    pub response: String,
    /// Unit embedding narrowed to `f32`.
    pub embedding: Vec<f32>,
    pub created_at_ms: u64,
    /// Zero means the entry never expires.
    pub ttl_secs: u64,
}

impl CacheEntry {
    pub fn expires_at_ms(&self) -> Option<u64> {
        (self.ttl_secs > 0).then(|| self.created_at_ms.saturating_add(self.ttl_secs.saturating_mul(1000)))
    }

    pub fn is_expired(&self, now_ms: u64) -> bool {
        self.expires_at_ms().is_some_and(|t| now_ms >= t)
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }
}

/// Index vector for a stored `f32` embedding, renormalized at double precision.
///
/// Both `put` and snapshot loading derive index vectors through this function,
/// so a restored store searches over bit-identical vectors.
fn index_vector(stored: &[f32]) -> Result<UnitEmbedding, VectorError> {
    normalize(&Embedding::from_f32(stored)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PartitionStats {
    pub dim: usize,
    pub entries: usize,
    pub tombstones: usize,
    pub max_level: usize,
    pub rebuilds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct StoreStats {
    pub partitions: Vec<PartitionStats>,
    pub total_entries: usize,
    pub total_tombstones: usize,
}

pub struct Partition {
    dim: usize,
    index: HnswIndex,
    entries: BTreeMap<u64, CacheEntry>,
    node_of: HashMap<u64, NodeId>,
    entry_of: HashMap<NodeId, u64>,
}

impl Partition {
    fn new(dim: usize, params: HnswParams) -> Self {
        Self {
            dim,
            index: HnswIndex::new(dim, params),
            entries: BTreeMap::new(),
            node_of: HashMap::new(),
            entry_of: HashMap::new(),
        }
    }

    fn insert(&mut self, entry: CacheEntry) -> Result<(), StoreError> {
        let v = index_vector(&entry.embedding)?;
        let node = self.index.insert(v)?;
        self.node_of.insert(entry.entry_id, node);
        self.entry_of.insert(node, entry.entry_id);
        self.entries.insert(entry.entry_id, entry);
        Ok(())
    }

    fn remove(&mut self, entry_id: u64) -> Option<CacheEntry> {
        let entry = self.entries.remove(&entry_id)?;
        if let Some(node) = self.node_of.remove(&entry_id) {
            self.entry_of.remove(&node);
            self.index.remove(node);
        }
        Some(entry)
    }

    fn rebuild_index(&mut self) {
        let (fresh, mapping) = self.index.rebuild();
        let old = std::mem::take(&mut self.entry_of);
        for (old_node, new_node) in mapping {
            let id = old[&old_node];
            self.node_of.insert(id, new_node);
            self.entry_of.insert(new_node, id);
        }
        self.index = fresh;
    }

    fn nearest(&self, q: &UnitEmbedding, k: usize, now_ms: u64) -> Vec<(CacheEntry, f64)> {
        let live = self.index.len();
        let mut fetch = k;
        loop {
            let hits = self.index.search(q, fetch).expect("dimension checked by caller");
            let exhausted = hits.len() < fetch || fetch >= live;
            let out: Vec<(CacheEntry, f64)> = hits
                .iter()
                .filter_map(|h| {
                    let id = self.entry_of.get(&h.node)?;
                    let entry = self.entries.get(id)?;
                    (!entry.is_expired(now_ms)).then(|| (entry.clone(), h.similarity))
                })
                .take(k)
                .collect();
            if out.len() >= k || exhausted {
                return out;
            }
            fetch = (fetch * 2).min(live);
        }
    }

    fn stats(&self) -> PartitionStats {
        let s = self.index.stats();
        PartitionStats {
            dim: self.dim,
            entries: self.entries.len(),
            tombstones: s.tombstone_count,
            max_level: s.max_level,
            rebuilds: self.index.generation(),
        }
    }

    /// Verifies the entry/index bijection.
    fn check_consistency(&self) -> Result<(), String> {
        let mut live: Vec<u64> = self
            .index
            .live_nodes()
            .map(|n| {
                self.entry_of
                    .get(&n)
                    .copied()
                    .ok_or_else(|| format!("live node {n} has no entry"))
            })
            .collect::<Result<_, _>>()?;
        live.sort_unstable();
        let ids: Vec<u64> = self.entries.keys().copied().collect();
        if live != ids {
            return Err(format!(
                "dim {}: {} live nodes vs {} entries",
                self.dim,
                live.len(),
                ids.len()
            ));
        }
        for (id, e) in &self.entries {
            if e.dim() != self.dim {
                return Err(format!("entry {id} has dim {} in partition {}", e.dim(), self.dim));
            }
        }
        Ok(())
    }
}

/// Thread-safe semantic store.
///
/// Readers (`nearest`, `stats`) share partition locks; writers (`put`,
/// `purge_expired`, `clear`) take a partition exclusively.
pub struct SemanticStore {
    partitions: RwLock<BTreeMap<usize, Arc<RwLock<Partition>>>>,
    params: HnswParams,
    default_ttl_secs: AtomicU64,
    next_entry_id: AtomicU64,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for SemanticStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemanticStore")
            .field("params", &self.params)
            .field("stats", &self.stats())
            .finish()
    }
}

impl SemanticStore {
    pub fn new(params: HnswParams, clock: Arc<dyn Clock>) -> Self {
        Self {
            partitions: RwLock::new(BTreeMap::new()),
            params,
            default_ttl_secs: AtomicU64::new(DEFAULT_TTL_SECS),
            next_entry_id: AtomicU64::new(0),
            clock,
        }
    }

    pub fn with_default_ttl(self, ttl_secs: u64) -> Self {
        self.default_ttl_secs.store(ttl_secs, Ordering::Relaxed);
        self
    }

    pub fn default_ttl_secs(&self) -> u64 {
        self.default_ttl_secs.load(Ordering::Relaxed)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn partition(&self, dim: usize) -> Option<Arc<RwLock<Partition>>> {
        self.partitions.read().get(&dim).cloned()
    }

    /// Stores a new entry; `ttl_secs` of `None` uses the store default.
    pub fn put(
        &self,
        question: &str,
        embedding: &UnitEmbedding,
        response: &str,
        ttl_secs: Option<u64>,
    ) -> Result<u64, StoreError> {
        if question.is_empty() {
            return Err(StoreError::InvalidEntry("question is empty".into()));
        }
        if response.is_empty() {
            return Err(StoreError::InvalidEntry("response is empty".into()));
        }
        let entry = CacheEntry {
            entry_id: self.next_entry_id.fetch_add(1, Ordering::Relaxed),
            question: question.to_owned(),
            response: response.to_owned(),
            embedding: embedding.to_f32(),
            created_at_ms: self.clock.now_ms(),
            ttl_secs: ttl_secs.unwrap_or_else(|| self.default_ttl_secs()),
        };
        let id = entry.entry_id;
        let dim = embedding.dim();
        loop {
            // Holding the map read guard keeps `clear` from orphaning this insert.
            {
                let map = self.partitions.read();
                if let Some(p) = map.get(&dim) {
                    p.write().insert(entry)?;
                    return Ok(id);
                }
            }
            self.partitions
                .write()
                .entry(dim)
                .or_insert_with(|| Arc::new(RwLock::new(Partition::new(dim, self.params))));
        }
    }

    /// Up to `k` unexpired entries most similar to `q`, best first.
    pub fn nearest(&self, q: &UnitEmbedding, k: usize) -> Vec<(CacheEntry, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let Some(partition) = self.partition(q.dim()) else {
            return Vec::new();
        };
        let now = self.clock.now_ms();
        let guard = partition.read();
        guard.nearest(q, k, now)
    }

    pub fn get(&self, entry_id: u64) -> Option<CacheEntry> {
        let map = self.partitions.read();
        map.values()
            .find_map(|p| p.read().entries.get(&entry_id).cloned())
    }

    /// Removes every expired entry and compacts indexes with too many tombstones.
    pub fn purge_expired(&self) -> usize {
        let now = self.clock.now_ms();
        let partitions: Vec<_> = self.partitions.read().values().cloned().collect();
        let mut removed = 0;
        for p in partitions {
            let mut part = p.write();
            let expired: Vec<u64> = part
                .entries
                .values()
                .filter(|e| e.is_expired(now))
                .map(|e| e.entry_id)
                .collect();
            for id in &expired {
                part.remove(*id);
            }
            removed += expired.len();
            if part.index.tombstone_ratio() > REBUILD_TOMBSTONE_RATIO {
                tracing::debug!(dim = part.dim, "rebuilding partition index");
                part.rebuild_index();
            }
        }
        removed
    }

    /// Drops every partition. Returns the number of entries removed.
    pub fn clear(&self) -> usize {
        let mut map = self.partitions.write();
        let removed = map.values().map(|p| p.read().entries.len()).sum();
        map.clear();
        removed
    }

    pub fn len(&self) -> usize {
        self.partitions
            .read()
            .values()
            .map(|p| p.read().entries.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> StoreStats {
        let partitions: Vec<PartitionStats> = self
            .partitions
            .read()
            .values()
            .map(|p| p.read().stats())
            .collect();
        StoreStats {
            total_entries: partitions.iter().map(|p| p.entries).sum(),
            total_tombstones: partitions.iter().map(|p| p.tombstones).sum(),
            partitions,
        }
    }

    /// All stored entries (including expired ones not yet purged), by dim then id.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.partitions
            .read()
            .values()
            .flat_map(|p| p.read().entries.values().cloned().collect::<Vec<_>>())
            .collect()
    }

    /// Checks that every partition's live index nodes match its entries one-to-one.
    pub fn check_consistency(&self) -> Result<(), String> {
        for p in self.partitions.read().values() {
            p.read().check_consistency()?;
        }
        Ok(())
    }
}
