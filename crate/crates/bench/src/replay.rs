//! Cache population, query replay and threshold sweeps.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use semgate_core::engine::LatencySummary;
use serde::{Deserialize, Serialize};

use crate::dataset::{SeedRecord, TestRecord};
use crate::judge::{Judge, OfflineJudge};
use crate::target::{QueryResult, Target};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub queries: u64,
    pub cache_hits: u64,
    pub positive_hits: u64,
    pub api_calls: u64,
    pub hit_rate: f64,
    /// Positive hits over cache hits; 0 when there were no hits.
    pub positive_rate: f64,
}

impl CategoryReport {
    fn new(category: &str) -> Self {
        Self {
            category: category.to_owned(),
            queries: 0,
            cache_hits: 0,
            positive_hits: 0,
            api_calls: 0,
            hit_rate: 0.0,
            positive_rate: 0.0,
        }
    }

    fn finish(&mut self) {
        self.hit_rate = ratio(self.cache_hits, self.queries);
        self.positive_rate = ratio(self.positive_hits, self.cache_hits);
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    fn from_durations(samples: &[Duration]) -> Self {
        let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1000.0).collect();
        let s = LatencySummary::from_samples(&ms);
        Self {
            mean_ms: s.mean_ms,
            p50_ms: s.p50_ms,
            p95_ms: s.p95_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub cached: LatencyStats,
    /// Absent when the uncached arm was skipped.
    pub uncached: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub threshold: f64,
    pub categories: Vec<CategoryReport>,
    /// Absent when timing was disabled, which makes reports reproducible byte for byte.
    pub latency: Option<LatencyReport>,
}

impl ReplayReport {
    /// Sums over all categories.
    pub fn totals(&self) -> CategoryReport {
        let mut t = CategoryReport::new("Total");
        for c in &self.categories {
            t.queries += c.queries;
            t.cache_hits += c.cache_hits;
            t.positive_hits += c.positive_hits;
            t.api_calls += c.api_calls;
        }
        t.finish();
        t
    }

    pub fn category(&self, name: &str) -> Option<&CategoryReport> {
        self.categories.iter().find(|c| c.category == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub test_id: String,
    pub hit: bool,
    pub matched_entry: Option<String>,
    pub positive: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayRun {
    pub report: ReplayReport,
    /// Per-query results in file order.
    pub outcomes: Vec<QueryOutcome>,
    /// Upstream calls made during the cached arm, when the target exposes them.
    pub upstream_calls: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReplayOptions {
    /// Concurrent in-flight queries; 1 replays strictly sequentially.
    pub parallel: usize,
    pub uncached_arm: bool,
    pub timing: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            parallel: 1,
            uncached_arm: true,
            timing: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Populated {
    pub inserted: usize,
    /// Entry id (as reported by the target) to seed id.
    pub seed_of_entry: HashMap<String, String>,
}

impl Populated {
    pub fn offline_judge(&self) -> OfflineJudge {
        OfflineJudge::new(self.seed_of_entry.clone())
    }
}

/// Stores every seed record, in order.
pub async fn populate(seeds: &[SeedRecord], target: &dyn Target) -> Result<Populated, BenchError> {
    let mut seed_of_entry = HashMap::with_capacity(seeds.len());
    for s in seeds {
        let id = target.put(&s.question, &s.answer).await?;
        seed_of_entry.insert(id, s.id.clone());
    }
    Ok(Populated {
        inserted: seeds.len(),
        seed_of_entry,
    })
}

async fn timed<T>(f: impl std::future::Future<Output = Result<T, BenchError>>) -> Result<(T, Duration), BenchError> {
    let started = Instant::now();
    let v = f.await?;
    Ok((v, started.elapsed()))
}

/// Runs every test query once through the cache, then (optionally) once more
/// with lookup bypassed for the uncached latency arm.
pub async fn replay(
    tests: &[TestRecord],
    target: &dyn Target,
    judge: &dyn Judge,
    threshold: f64,
    opts: ReplayOptions,
) -> Result<ReplayRun, BenchError> {
    let parallel = opts.parallel.max(1);
    let calls_before = target.upstream_calls();
    let cached: Vec<Result<(QueryResult, Duration), BenchError>> = stream::iter(tests)
        .map(|t| timed(target.query(&t.query)))
        .buffered(parallel)
        .collect()
        .await;
    let upstream_calls = match (calls_before, target.upstream_calls()) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };

    let mut categories: Vec<CategoryReport> = Vec::new();
    let mut outcomes = Vec::with_capacity(tests.len());
    let mut cached_times = Vec::with_capacity(tests.len());
    for (t, r) in tests.iter().zip(cached) {
        let (result, elapsed) = r?;
        cached_times.push(elapsed);
        let idx = match categories.iter().position(|c| c.category == t.category) {
            Some(i) => i,
            None => {
                categories.push(CategoryReport::new(&t.category));
                categories.len() - 1
            }
        };
        let c = &mut categories[idx];
        c.queries += 1;
        let positive = result.hit
            && judge.judge(
                t,
                result.matched_question.as_deref().unwrap_or_default(),
                result.matched_entry.as_deref().unwrap_or_default(),
            );
        if result.hit {
            c.cache_hits += 1;
            c.positive_hits += u64::from(positive);
        } else {
            c.api_calls += 1;
        }
        outcomes.push(QueryOutcome {
            test_id: t.id.clone(),
            hit: result.hit,
            matched_entry: result.matched_entry,
            positive,
        });
    }
    categories.iter_mut().for_each(CategoryReport::finish);

    let uncached = if opts.uncached_arm {
        let times: Vec<Result<((), Duration), BenchError>> = stream::iter(tests)
            .map(|t| timed(target.query_uncached(&t.query)))
            .buffered(parallel)
            .collect()
            .await;
        let times = times.into_iter().map(|r| r.map(|(_, d)| d)).collect::<Result<Vec<_>, _>>()?;
        Some(LatencyStats::from_durations(&times))
    } else {
        None
    };

    let latency = opts.timing.then(|| LatencyReport {
        cached: LatencyStats::from_durations(&cached_times),
        uncached,
    });
    Ok(ReplayRun {
        report: ReplayReport {
            threshold,
            categories,
            latency,
        },
        outcomes,
        upstream_calls,
    })
}

/// `from, from+step, …, to`, rounded to suppress float drift.
pub fn threshold_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>, BenchError> {
    if !(step > 0.0) || !(from <= to) || !(0.0..=1.0).contains(&from) || !(0.0..=1.0).contains(&to) {
        return Err(BenchError::Validation(format!(
            "invalid threshold range {from}..={to} step {step}"
        )));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// One full replay per threshold, each against a freshly flushed and
/// repopulated cache. `make_judge` builds the judge for each population.
pub async fn sweep_threshold(
    seeds: &[SeedRecord],
    tests: &[TestRecord],
    target: &dyn Target,
    thresholds: &[f64],
    make_judge: &(dyn Fn(&Populated) -> Box<dyn Judge> + Sync),
    opts: ReplayOptions,
) -> Result<Vec<ReplayReport>, BenchError> {
    if let Some(bad) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(BenchError::Validation(format!("threshold {bad} outside [0, 1]")));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(BenchError::Validation("thresholds must be sorted ascending".into()));
    }
    let mut reports = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let run = prepare_and_replay(seeds, tests, target, t, make_judge, opts).await?;
        reports.push(run.report);
    }
    Ok(reports)
}

/// Flushes, repopulates, sets the threshold, replays.
pub async fn prepare_and_replay(
    seeds: &[SeedRecord],
    tests: &[TestRecord],
    target: &dyn Target,
    threshold: f64,
    make_judge: &(dyn Fn(&Populated) -> Box<dyn Judge> + Sync),
    opts: ReplayOptions,
) -> Result<ReplayRun, BenchError> {
    target.flush().await?;
    let populated = populate(seeds, target).await?;
    target.set_threshold(threshold).await?;
    let judge = make_judge(&populated);
    replay(tests, target, judge.as_ref(), threshold, opts).await
}

pub fn offline(p: &Populated) -> Box<dyn Judge> {
    Box::new(p.offline_judge())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let r = threshold_range(0.6, 0.9, 0.05).unwrap();
        assert_eq!(r, vec![0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9]);
        assert_eq!(threshold_range(0.8, 0.8, 0.1).unwrap(), vec![0.8]);
        assert!(threshold_range(0.9, 0.6, 0.05).is_err());
        assert!(threshold_range(0.6, 0.9, 0.0).is_err());
        assert!(threshold_range(0.6, 1.2, 0.1).is_err());
    }

    #[test]
    fn totals_add_up() {
        let mut a = CategoryReport::new("a");
        (a.queries, a.cache_hits, a.positive_hits, a.api_calls) = (10, 6, 5, 4);
        a.finish();
        let mut b = CategoryReport::new("b");
        (b.queries, b.cache_hits, b.positive_hits, b.api_calls) = (5, 0, 0, 5);
        b.finish();
        assert_eq!(b.positive_rate, 0.0);
        let r = ReplayReport {
            threshold: 0.8,
            categories: vec![a, b],
            latency: None,
        };
        let t = r.totals();
        assert_eq!((t.queries, t.cache_hits, t.positive_hits, t.api_calls), (15, 6, 5, 9));
        assert_eq!(t.hit_rate, 0.4);
        assert!((t.positive_rate - 5.0 / 6.0).abs() < 1e-15);
    }
}
