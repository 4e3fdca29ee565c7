use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use semgate_core::ann::HnswParams;
use semgate_core::clock::{Clock, ManualClock};
use semgate_core::store::SemanticStore;
use semgate_core::vectorops::{normalize, Embedding, UnitEmbedding};

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> UnitEmbedding {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&Embedding::new(v).unwrap()).unwrap()
}

fn new_store(clock: Arc<ManualClock>) -> SemanticStore {
    SemanticStore::new(HnswParams::default(), clock)
}

#[test]
fn nearest_finds_exact_entry_among_100() {
    let clock = Arc::new(ManualClock::new(0));
    let store = new_store(clock);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vecs: Vec<_> = (0..100).map(|_| random_unit(&mut rng, 32)).collect();
    let ids: Vec<u64> = vecs
        .iter()
        .enumerate()
        .map(|(i, v)| store.put(&format!("q{i}"), v, "r", None).unwrap())
        .collect();
    // Oracle: full scan over the stored f32 values.
    let target = &vecs[7];
    let best = store
        .entries()
        .into_iter()
        .map(|e| {
            let s: f64 = e.embedding.iter().zip(target.iter()).map(|(a, b)| *a as f64 * b).sum();
            (s, e.entry_id)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    assert_eq!(best.1, ids[7]);
    assert_eq!(store.nearest(target, 1)[0].0.entry_id, ids[7]);
}

#[test]
fn snapshot_round_trip_500_entries() {
    let clock = Arc::new(ManualClock::new(1_700_000_000_000));
    let store = new_store(clock.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..500 {
        let dim = if i % 5 == 0 { 48 } else { 32 };
        let ttl = [None, Some(0), Some(3600)][i % 3];
        clock.advance_ms(3);
        store
            .put(&format!("question {i} ✓"), &random_unit(&mut rng, dim), &format!("answer {i}"), ttl)
            .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.sgc");
    let written = store.snapshot_save(&path).unwrap();
    assert_eq!(written, std::fs::metadata(&path).unwrap().len());

    let loaded = SemanticStore::snapshot_load(&path, HnswParams::default(), clock.clone()).unwrap();
    let before = store.entries();
    let after = loaded.entries();
    assert_eq!(before.len(), after.len());
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.entry_id, b.entry_id);
        assert_eq!(a.question, b.question);
        assert_eq!(a.response, b.response);
        assert_eq!(a.created_at_ms, b.created_at_ms);
        assert_eq!(a.ttl_secs, b.ttl_secs);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.embedding), bits(&b.embedding));
    }
    let per_dim = |s: &SemanticStore| {
        s.stats().partitions.iter().map(|p| (p.dim, p.entries)).collect::<Vec<_>>()
    };
    assert_eq!(per_dim(&store), per_dim(&loaded));
    loaded.check_consistency().unwrap();

    for _ in 0..50 {
        let q = random_unit(&mut rng, 32);
        let a: Vec<_> = store.nearest(&q, 5).into_iter().map(|(e, s)| (e.entry_id, s)).collect();
        let b: Vec<_> = loaded.nearest(&q, 5).into_iter().map(|(e, s)| (e.entry_id, s)).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn concurrent_readers_and_writers() {
    let clock = Arc::new(ManualClock::new(0));
    let store = Arc::new(new_store(clock));
    let handles: Vec<_> = (0..4)
        .map(|t| {
            let store = store.clone();
            std::thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                for i in 0..100 {
                    let v = random_unit(&mut rng, 16);
                    if i % 2 == 0 {
                        store.put("q", &v, "r", None).unwrap();
                    } else {
                        store.nearest(&v, 3);
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.len(), 200);
    store.check_consistency().unwrap();
}

#[derive(Debug, Clone)]
enum Op {
    Put { dim_small: bool, ttl: u64 },
    Advance(u64),
    Purge,
    Query { dim_small: bool },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (any::<bool>(), 0u64..4).prop_map(|(dim_small, ttl)| Op::Put { dim_small, ttl }),
        1 => (0u64..3000).prop_map(Op::Advance),
        1 => Just(Op::Purge),
        2 => any::<bool>().prop_map(|dim_small| Op::Query { dim_small }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bijection_and_expiry_hold(ops in prop::collection::vec(op(), 1..80), seed in any::<u64>()) {
        let clock = Arc::new(ManualClock::new(0));
        let store = new_store(clock.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in ops {
            match op {
                Op::Put { dim_small, ttl } => {
                    let dim = if dim_small { 4 } else { 9 };
                    store.put("q", &random_unit(&mut rng, dim), "r", Some(ttl)).unwrap();
                }
                Op::Advance(ms) => clock.advance_ms(ms),
                Op::Purge => {
                    let now = clock.now_ms();
                    let expired = store.entries().iter().filter(|e| e.is_expired(now)).count();
                    prop_assert_eq!(store.purge_expired(), expired);
                }
                Op::Query { dim_small } => {
                    let dim = if dim_small { 4 } else { 9 };
                    let now = clock.now_ms();
                    let hits = store.nearest(&random_unit(&mut rng, dim), 50);
                    let live = store.entries().iter().filter(|e| e.dim() == dim && !e.is_expired(now)).count();
                    prop_assert_eq!(hits.len(), live.min(50));
                    for (e, _) in &hits {
                        prop_assert!(!e.is_expired(now));
                        let exp = e.expires_at_ms();
                        prop_assert!(exp.is_none_or(|t| now < t));
                    }
                    for w in hits.windows(2) {
                        prop_assert!(w[0].1 >= w[1].1);
                    }
                }
            }
            prop_assert!(store.check_consistency().is_ok());
        }
        let st = store.stats();
        prop_assert_eq!(st.total_entries, st.partitions.iter().map(|p| p.entries).sum::<usize>());
        prop_assert_eq!(st.total_entries, store.len());
    }
}
