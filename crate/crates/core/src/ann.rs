//! Hierarchical Navigable Small World graph over unit embeddings.
//!
//! Each node is assigned a top level drawn from a geometric distribution and is
//! linked into every layer up to that level. Queries descend greedily through
//! the sparse upper layers and finish with a best-first beam search on layer 0.
//!
//! Neighbor selection keeps the most similar candidates up to the layer's
//! degree cap (M, or 2M on layer 0). The usual relative-neighborhood
//! heuristic is not used. When pruning drops an edge the reverse edge is
//! removed too, so adjacency stays symmetric.
//!
//! Deletions only tombstone a node; the graph keeps routing through it until
//! [`HnswIndex::rebuild`] compacts the index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vectorops::{unit_dot, UnitEmbedding, VectorError};

/// Hard cap on drawn levels; unreachable in practice for M ≥ 2.
const MAX_LEVEL_CAP: usize = 24;

/// Dense node identifier, assigned in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u64);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max neighbors per node on layers ≥ 1; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Level assignment scale, conventionally `1 / ln(m)`.
    pub level_lambda: f64,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_m(16)
    }
}

impl HnswParams {
    /// Defaults for a given `m`: ef_construction 200, ef_search 64, lambda 1/ln(m).
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            ef_construction: 200.max(m),
            ef_search: 64,
            level_lambda: 1.0 / (m.max(2) as f64).ln(),
            seed: 0x5eed_cafe,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 {
            return Err("m must be positive".into());
        }
        if self.ef_construction < self.m {
            return Err(format!(
                "ef_construction ({}) must be at least m ({})",
                self.ef_construction, self.m
            ));
        }
        if self.ef_search == 0 {
            return Err("ef_search must be positive".into());
        }
        if !(self.level_lambda.is_finite() && self.level_lambda > 0.0) {
            return Err("level_lambda must be a positive real".into());
        }
        Ok(())
    }

    fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub node: NodeId,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IndexStats {
    pub live_count: usize,
    pub tombstone_count: usize,
    pub max_level: usize,
    pub distance_count: u64,
}

/// Search candidate ordered by similarity, then by smaller id.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Greater means better: higher similarity, then lower id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Node {
    vector: UnitEmbedding,
    /// `links[level]` is the adjacency list on that level.
    links: Vec<Vec<usize>>,
}

pub struct HnswIndex {
    dim: usize,
    params: HnswParams,
    nodes: Vec<Node>,
    tombstones: Vec<bool>,
    tombstone_count: usize,
    entry_point: Option<usize>,
    max_level: usize,
    rng: ChaCha8Rng,
    generation: u64,
    distance_count: AtomicU64,
}

impl fmt::Debug for HnswIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HnswIndex")
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("stats", &self.stats())
            .finish()
    }
}

/// SplitMix64 finalizer used to derive per-generation seeds.
fn mix_seed(seed: u64, generation: u64) -> u64 {
    let mut z = seed ^ generation.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        Self::with_generation(dim, params, 0)
    }

    fn with_generation(dim: usize, params: HnswParams, generation: u64) -> Self {
        assert!(dim > 0, "index dimension must be positive");
        if let Err(e) = params.validate() {
            panic!("invalid HNSW parameters: {e}");
        }
        Self {
            dim,
            params,
            nodes: Vec::new(),
            tombstones: Vec::new(),
            tombstone_count: 0,
            entry_point: None,
            max_level: 0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(params.seed, generation)),
            generation,
            distance_count: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    /// Changes the query beam width; the graph is unaffected.
    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef.max(1);
    }

    /// Number of rebuilds this index descends from.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn entry_point(&self) -> Option<NodeId> {
        self.entry_point.map(|i| NodeId(i as u64))
    }

    pub fn len(&self) -> usize {
        self.nodes.len() - self.tombstone_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_live(&self, node: NodeId) -> bool {
        self.tombstones.get(node.idx()).is_some_and(|dead| !dead)
    }

    pub fn vector(&self, node: NodeId) -> Option<&UnitEmbedding> {
        self.nodes.get(node.idx()).map(|n| &n.vector)
    }

    /// Level the node was inserted at (its highest layer).
    pub fn node_level(&self, node: NodeId) -> Option<usize> {
        self.nodes.get(node.idx()).map(|n| n.links.len() - 1)
    }

    pub fn neighbors(&self, node: NodeId, level: usize) -> Option<Vec<NodeId>> {
        let n = self.nodes.get(node.idx())?;
        let links = n.links.get(level)?;
        Some(links.iter().map(|&i| NodeId(i as u64)).collect())
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.tombstones
            .iter()
            .enumerate()
            .filter(|(_, dead)| !**dead)
            .map(|(i, _)| NodeId(i as u64))
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            live_count: self.len(),
            tombstone_count: self.tombstone_count,
            max_level: self.max_level,
            distance_count: self.distance_count.load(AtomicOrdering::Relaxed),
        }
    }

    /// Fraction of nodes that are tombstones; 0 for an empty index.
    pub fn tombstone_ratio(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            self.tombstone_count as f64 / self.nodes.len() as f64
        }
    }

    fn check_dim(&self, v: &UnitEmbedding) -> Result<(), VectorError> {
        if v.dim() != self.dim {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(())
    }

    fn draw_level(&mut self) -> usize {
        // uniform on (0, 1]
        let u = 1.0 - self.rng.random::<f64>();
        let level = (-u.ln() * self.params.level_lambda).floor();
        (level as usize).min(MAX_LEVEL_CAP)
    }

    fn sim(&self, q: &[f64], id: usize, counter: &mut u64) -> f64 {
        *counter += 1;
        unit_dot(q, &self.nodes[id].vector)
    }

    /// Beam search on one layer. Returns up to `ef` candidates, best first.
    fn search_layer(
        &self,
        q: &[f64],
        entry: &[Candidate],
        ef: usize,
        level: usize,
        visited: &mut VisitedSet,
        counter: &mut u64,
    ) -> Vec<Candidate> {
        visited.clear();
        let mut frontier: BinaryHeap<Candidate> = BinaryHeap::new();
        // Min-heap over the current results via Reverse ordering.
        let mut results: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
        for &c in entry {
            if visited.insert(c.id) {
                frontier.push(c);
                results.push(std::cmp::Reverse(c));
            }
        }
        while results.len() > ef {
            results.pop();
        }

        while let Some(current) = frontier.pop() {
            let worst = results.peek().map(|r| r.0);
            if let Some(worst) = worst {
                if results.len() >= ef && current < worst {
                    break;
                }
            }
            for &nb in &self.nodes[current.id].links[level] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Candidate {
                    sim: self.sim(q, nb, counter),
                    id: nb,
                };
                let admit = results.len() < ef || results.peek().is_some_and(|w| cand > w.0);
                if admit {
                    frontier.push(cand);
                    results.push(std::cmp::Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        let mut out: Vec<Candidate> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Greedy descent from the entry point down to (but excluding) `target_level`.
    fn descend(&self, q: &[f64], target_level: usize, counter: &mut u64) -> Option<Candidate> {
        let ep = self.entry_point?;
        let mut best = Candidate {
            sim: self.sim(q, ep, counter),
            id: ep,
        };
        let mut level = self.max_level;
        while level > target_level {
            let mut improved = true;
            while improved {
                improved = false;
                for &nb in &self.nodes[best.id].links[level] {
                    let cand = Candidate {
                        sim: self.sim(q, nb, counter),
                        id: nb,
                    };
                    if cand > best {
                        best = cand;
                        improved = true;
                    }
                }
            }
            level -= 1;
        }
        Some(best)
    }

    pub fn insert(&mut self, v: UnitEmbedding) -> Result<NodeId, VectorError> {
        self.check_dim(&v)?;
        let id = self.nodes.len();
        let level = self.draw_level();
        self.nodes.push(Node {
            vector: v,
            links: vec![Vec::new(); level + 1],
        });
        self.tombstones.push(false);

        let Some(_) = self.entry_point else {
            self.entry_point = Some(id);
            self.max_level = level;
            return Ok(NodeId(id as u64));
        };

        let mut counter = 0u64;
        let q = self.nodes[id].vector.values().to_vec();
        let top = level.min(self.max_level);
        let start = self
            .descend(&q, top, &mut counter)
            .expect("entry point present");
        let mut entry = vec![start];
        let mut visited = VisitedSet::new(self.nodes.len());

        for lc in (0..=top).rev() {
            let found = self.search_layer(
                &q,
                &entry,
                self.params.ef_construction,
                lc,
                &mut visited,
                &mut counter,
            );
            let selected: Vec<usize> = found
                .iter()
                .filter(|c| c.id != id)
                .take(self.params.max_degree(lc))
                .map(|c| c.id)
                .collect();
            self.nodes[id].links[lc] = selected.clone();
            for nb in selected {
                self.nodes[nb].links[lc].push(id);
                self.prune(nb, lc, &mut counter);
            }
            entry = found;
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry_point = Some(id);
        }
        self.distance_count.fetch_add(counter, AtomicOrdering::Relaxed);
        Ok(NodeId(id as u64))
    }

    /// Trims `node`'s adjacency on `level` to the degree cap, keeping its most
    /// similar neighbors and dropping the reverse edge of every evicted one.
    fn prune(&mut self, node: usize, level: usize, counter: &mut u64) {
        let cap = self.params.max_degree(level);
        if self.nodes[node].links[level].len() <= cap {
            return;
        }
        let base = &self.nodes[node].vector;
        let mut scored: Vec<Candidate> = self.nodes[node].links[level]
            .iter()
            .map(|&nb| {
                *counter += 1;
                Candidate {
                    sim: unit_dot(base, &self.nodes[nb].vector),
                    id: nb,
                }
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        let dropped: Vec<usize> = scored[cap..].iter().map(|c| c.id).collect();
        self.nodes[node].links[level] = scored[..cap].iter().map(|c| c.id).collect();
        for d in dropped {
            self.nodes[d].links[level].retain(|&x| x != node);
        }
    }

    pub fn search(&self, q: &UnitEmbedding, k: usize) -> Result<Vec<SearchHit>, VectorError> {
        self.check_dim(q)?;
        let live = self.len();
        if k == 0 || live == 0 {
            return Ok(Vec::new());
        }
        let mut counter = 0u64;
        let start = self.descend(q, 0, &mut counter).expect("live index has entry");
        // Over-fetch so tombstoned nodes cannot crowd out live results.
        let ef = self.params.ef_search.max(k + self.tombstone_count);
        let mut visited = VisitedSet::new(self.nodes.len());
        let found = self.search_layer(q, &[start], ef, 0, &mut visited, &mut counter);
        self.distance_count.fetch_add(counter, AtomicOrdering::Relaxed);

        let hits: Vec<SearchHit> = found
            .into_iter()
            .filter(|c| !self.tombstones[c.id])
            .take(k)
            .map(|c| SearchHit {
                node: NodeId(c.id as u64),
                similarity: c.sim,
            })
            .collect();
        if hits.len() < k.min(live) {
            // The live part of the graph was not fully reachable from the entry point.
            return self.brute_force_search(q, k);
        }
        Ok(hits)
    }

    /// Exact top-k over all live nodes by full scan.
    pub fn brute_force_search(
        &self,
        q: &UnitEmbedding,
        k: usize,
    ) -> Result<Vec<SearchHit>, VectorError> {
        self.check_dim(q)?;
        let mut scored: Vec<Candidate> = (0..self.nodes.len())
            .filter(|&i| !self.tombstones[i])
            .map(|i| Candidate {
                sim: unit_dot(q, &self.nodes[i].vector),
                id: i,
            })
            .collect();
        self.distance_count
            .fetch_add(scored.len() as u64, AtomicOrdering::Relaxed);
        scored.sort_by(|a, b| b.cmp(a));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|c| SearchHit {
                node: NodeId(c.id as u64),
                similarity: c.sim,
            })
            .collect())
    }

    /// Tombstones `node`. Returns false if it is unknown or already removed.
    pub fn remove(&mut self, node: NodeId) -> bool {
        match self.tombstones.get_mut(node.idx()) {
            Some(dead) if !*dead => {
                *dead = true;
                self.tombstone_count += 1;
                if self.len() == 0 {
                    self.entry_point = None;
                    self.max_level = 0;
                }
                true
            }
            _ => false,
        }
    }

    /// Builds a compacted index holding only live nodes, reinserted in id order.
    ///
    /// The new index draws levels from a seed derived from the original seed and
    /// the rebuild generation. Returns the index and the old→new id mapping.
    pub fn rebuild(&self) -> (HnswIndex, HashMap<NodeId, NodeId>) {
        let mut fresh = HnswIndex::with_generation(self.dim, self.params, self.generation + 1);
        let mut mapping = HashMap::with_capacity(self.len());
        for old in self.live_nodes() {
            let v = self.nodes[old.idx()].vector.clone();
            let new = fresh.insert(v).expect("dimension preserved");
            mapping.insert(old, new);
        }
        (fresh, mapping)
    }
}

/// Visited marks for one search, reset between layers.
struct VisitedSet {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn clear(&mut self) {
        self.epoch += 1;
    }

    fn insert(&mut self, id: usize) -> bool {
        if self.marks[id] == self.epoch {
            false
        } else {
            self.marks[id] = self.epoch;
            true
        }
    }
}
