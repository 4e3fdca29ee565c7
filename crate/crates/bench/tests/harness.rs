use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use semgate_bench::dataset::{self, GenerateOptions};
use semgate_bench::replay::{self, ReplayOptions};
use semgate_bench::{generate_synthetic, render, EmbeddedTarget, Format, HttpTarget, Target};
use semgate_core::clock::ManualClock;
use semgate_core::HnswParams;

fn counts_only() -> ReplayOptions {
    ReplayOptions {
        parallel: 1,
        uncached_arm: false,
        timing: false,
    }
}

fn target() -> EmbeddedTarget {
    EmbeddedTarget::mock(HnswParams::default(), 0.8, Duration::ZERO, Arc::new(ManualClock::new(0))).unwrap()
}

#[tokio::test]
async fn all_paraphrase_fixture_hits_everything_correctly() {
    let d = generate_synthetic(&GenerateOptions::uniform(60, 40, 1.0, 3)).unwrap();
    let t = target();
    let run = replay::prepare_and_replay(&d.seeds, &d.tests, &t, 0.8, &replay::offline, counts_only())
        .await
        .unwrap();
    let total = run.report.totals();
    assert_eq!(total.queries, 160);
    assert_eq!(total.hit_rate, 1.0);
    assert_eq!(total.positive_rate, 1.0);
    assert_eq!(run.upstream_calls, Some(0));
}

#[tokio::test]
async fn all_novel_fixture_never_hits() {
    let d = generate_synthetic(&GenerateOptions::uniform(60, 40, 0.0, 4)).unwrap();
    let t = target();
    let run = replay::prepare_and_replay(&d.seeds, &d.tests, &t, 0.8, &replay::offline, counts_only())
        .await
        .unwrap();
    let total = run.report.totals();
    assert_eq!(total.cache_hits, 0);
    assert_eq!(total.api_calls, 160);
    assert_eq!(run.upstream_calls, Some(160));
    // every miss was stored
    assert_eq!(t.entry_count().await.unwrap(), 240 + 160);
}

#[tokio::test]
async fn populate_counts_match_store() {
    let d = generate_synthetic(&GenerateOptions::uniform(25, 0, 0.5, 5)).unwrap();
    let t = target();
    let p = replay::populate(&d.seeds, &t).await.unwrap();
    assert_eq!(p.inserted, 100);
    assert_eq!(t.engine().store().stats().total_entries, 100);
    assert_eq!(p.seed_of_entry.len(), 100);
    assert_eq!(replay::populate(&[], &t).await.unwrap().inserted, 0);
}

#[tokio::test]
async fn conservation_holds_sequential_and_parallel() {
    let d = generate_synthetic(&GenerateOptions::uniform(50, 60, 0.6, 6)).unwrap();
    for parallel in [1, 8] {
        let t = target();
        let opts = ReplayOptions {
            parallel,
            ..counts_only()
        };
        let run = replay::prepare_and_replay(&d.seeds, &d.tests, &t, 0.8, &replay::offline, opts)
            .await
            .unwrap();
        for c in &run.report.categories {
            assert_eq!(c.cache_hits + c.api_calls, c.queries);
            assert!(c.positive_hits <= c.cache_hits);
            assert_eq!(c.hit_rate, c.cache_hits as f64 / c.queries as f64);
        }
        let total = run.report.totals();
        assert_eq!(run.upstream_calls, Some(total.api_calls));
        assert_eq!(run.outcomes.len(), d.tests.len());
        for (o, t) in run.outcomes.iter().zip(&d.tests) {
            assert_eq!(o.test_id, t.id);
        }
    }
}

#[tokio::test]
async fn counts_only_reports_are_byte_identical() {
    let d = generate_synthetic(&GenerateOptions::uniform(40, 50, 0.67, 9)).unwrap();
    let mut rendered = Vec::new();
    for _ in 0..2 {
        let t = target();
        let run = replay::prepare_and_replay(&d.seeds, &d.tests, &t, 0.8, &replay::offline, counts_only())
            .await
            .unwrap();
        rendered.push(render(&[run.report], Format::Json));
    }
    assert_eq!(rendered[0], rendered[1]);
}

#[tokio::test]
async fn sweep_validates_and_orders() {
    let d = generate_synthetic(&GenerateOptions::uniform(40, 40, 0.5, 10)).unwrap();
    let t = target();
    let ts = replay::threshold_range(0.6, 0.9, 0.1).unwrap();
    let reports = replay::sweep_threshold(&d.seeds, &d.tests, &t, &ts, &replay::offline, counts_only())
        .await
        .unwrap();
    assert_eq!(reports.iter().map(|r| r.threshold).collect::<Vec<_>>(), ts);
    for w in reports.windows(2) {
        assert!(w[0].totals().cache_hits >= w[1].totals().cache_hits);
    }
    // each run starts from the same populated cache
    assert_eq!(
        t.entry_count().await.unwrap() as u64,
        160 + reports.last().unwrap().totals().api_calls
    );
    let unsorted = replay::sweep_threshold(&d.seeds, &d.tests, &t, &[0.8, 0.7], &replay::offline, counts_only()).await;
    assert!(matches!(unsorted, Err(semgate_bench::BenchError::Validation(_))));
    let out_of_range = replay::sweep_threshold(&d.seeds, &d.tests, &t, &[0.5, 1.5], &replay::offline, counts_only()).await;
    assert_eq!(out_of_range.unwrap_err().exit_code(), 2);
}

#[tokio::test]
async fn latency_arms_with_delayed_upstream() {
    let d = generate_synthetic(&GenerateOptions::uniform(20, 20, 0.75, 11)).unwrap();
    let t = EmbeddedTarget::mock(HnswParams::default(), 0.8, Duration::from_millis(20), Arc::new(ManualClock::new(0)))
        .unwrap();
    let opts = ReplayOptions {
        parallel: 16,
        ..ReplayOptions::default()
    };
    let run = replay::prepare_and_replay(&d.seeds, &d.tests, &t, 0.8, &replay::offline, opts)
        .await
        .unwrap();
    let l = run.report.latency.clone().unwrap();
    let uncached = l.uncached.unwrap();
    assert!(uncached.mean_ms >= 20.0);
    assert!(l.cached.mean_ms < uncached.mean_ms, "{l:?}");
    // the bypass pass is not counted as cache traffic
    assert_eq!(run.upstream_calls, Some(run.report.totals().api_calls));
}

async fn spawn_gateway() -> String {
    use semgate_core::providers::{MockEmbedder, MockLlm};
    use semgate_core::{Engine, EngineConfig, SemanticStore};
    let store = Arc::new(SemanticStore::new(HnswParams::default(), Arc::new(ManualClock::new(0))));
    let engine = Engine::new(EngineConfig::default(), store, Arc::new(MockEmbedder), Arc::new(MockLlm::new())).unwrap();
    let app = semgate_gateway::Gateway::with_engine(Arc::new(engine)).router();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test]
async fn http_target_matches_embedded() {
    let d = generate_synthetic(&GenerateOptions::uniform(30, 30, 0.6, 12)).unwrap();
    let http = HttpTarget::new(&spawn_gateway().await);
    let embedded = target();
    let mut reports = Vec::new();
    for t in [&http as &dyn Target, &embedded] {
        let run = replay::prepare_and_replay(&d.seeds, &d.tests, t, 0.8, &replay::offline, counts_only())
            .await
            .unwrap();
        reports.push(run.report);
    }
    assert_eq!(reports[0], reports[1]);
    assert!(reports[0].totals().cache_hits > 0);
    assert_eq!(http.entry_count().await.unwrap(), embedded.entry_count().await.unwrap());
    assert!(matches!(http.set_threshold(2.0).await, Err(semgate_bench::BenchError::Validation(_))));
}

#[tokio::test]
async fn unreachable_gateway_is_a_runtime_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let t = HttpTarget::new(&format!("http://{addr}"));
    let err = t.flush().await.unwrap_err();
    assert!(matches!(err, semgate_bench::BenchError::TargetUnavailable(_)));
    assert_eq!(err.exit_code(), 1);
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semgate-bench"))
}

#[test]
fn cli_generate_replay_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fx");
    let st = bench()
        .args(["generate", "--seeds", "30", "--tests", "25", "--paraphrase-fraction", "0.6", "--seed", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let tests = dataset::read_tests(&out.join("tests.jsonl")).unwrap();
    assert_eq!(tests.len(), 100);
    let fixture: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fixture.json")).unwrap()).unwrap();
    assert_eq!(fixture["paraphrase_counts"]["Customer Shopping QA"], 15);

    let report = dir.path().join("r.json");
    let run = |extra: &[&str]| {
        let mut c = bench();
        c.args(extra)
            .arg("--tests")
            .arg(out.join("tests.jsonl"))
            .arg("--dataset")
            .arg(out.join("seeds.jsonl"));
        c
    };
    let st = run(&["replay", "--no-timing"]).arg("--report").arg(&report).status().unwrap();
    assert!(st.success());
    let first = std::fs::read(&report).unwrap();
    let st = run(&["replay", "--no-timing"]).arg("--report").arg(&report).status().unwrap();
    assert!(st.success());
    assert_eq!(first, std::fs::read(&report).unwrap());
    let parsed: Vec<semgate_bench::ReplayReport> = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed[0].totals().queries, 100);

    let o = run(&["sweep", "--format", "table", "--no-uncached", "--from", "0.7", "--to", "0.9", "--step", "0.1"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.matches("threshold ").count(), 3);
    assert!(text.contains("Positive Hits"));

    let o = run(&["replay", "--threshold", "1.5"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bench()
        .args(["generate", "--seeds", "1", "--tests", "1", "--paraphrase-fraction", "1.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fraction"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":1}\n").unwrap();
    let o = bench().args(["populate", "--dataset"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let o = bench().args(["populate", "--dataset"]).arg(dir.path().join("nope")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    let good = dir.path().join("fx");
    bench()
        .args(["generate", "--seeds", "2", "--tests", "0", "--out"])
        .arg(&good)
        .status()
        .unwrap();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let o = bench()
        .args(["populate", "--target", &format!("http://{addr}"), "--dataset"])
        .arg(good.join("seeds.jsonl"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bench()
        .args(["populate", "--dataset"])
        .arg(good.join("seeds.jsonl"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("inserted 8"));
}
