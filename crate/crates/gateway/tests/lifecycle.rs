use std::path::Path;
use std::process::Command;
use std::time::Duration;

use semgate_core::store::StoreError;
use semgate_gateway::{Gateway, GatewayConfig, GatewayError};
use serde_json::{json, Value};
use tokio::sync::oneshot;

fn mock_config(snapshot: &Path) -> GatewayConfig {
    GatewayConfig::from_parts(
        Some(json!({
            "upstream": {"kind": "mock"},
            "embedding": {"kind": "mock", "dim": 64},
            "cache": {"snapshot_path": snapshot, "purge_interval_secs": 1}
        })),
        vec![],
    )
    .unwrap()
}

struct Running {
    base: String,
    stop: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<Result<(), GatewayError>>,
}

async fn start(cfg: &GatewayConfig) -> Running {
    let gateway = Gateway::from_config(cfg).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(gateway.serve(listener, async move {
        let _ = rx.await;
    }));
    Running { base, stop, task }
}

impl Running {
    async fn shutdown(self) {
        self.stop.send(()).unwrap();
        self.task.await.unwrap().unwrap();
    }
}

async fn stats(http: &reqwest::Client, base: &str) -> Value {
    http.get(format!("{base}/admin/stats")).send().await.unwrap().json().await.unwrap()
}

#[tokio::test]
async fn snapshot_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.sgc");
    let cfg = mock_config(&path);
    let http = reqwest::Client::new();

    let first = start(&cfg).await;
    assert_eq!(stats(&http, &first.base).await["entries"], 0);
    for i in 0..12 {
        let r = http
            .post(format!("{}/v1/chat/completions", first.base))
            .json(&json!({"messages": [{"role": "user", "content": format!("distinct question {i} token{i}")}]}))
            .send()
            .await
            .unwrap();
        assert_eq!(r.headers()["x-semantic-cache"], "miss");
    }
    first.shutdown().await;
    assert!(path.exists());

    let second = start(&cfg).await;
    let s = stats(&http, &second.base).await;
    assert_eq!(s["entries"], 12);
    assert_eq!(s["partitions"], json!([{"dim": 64, "entries": 12}]));
    let r = http
        .post(format!("{}/v1/chat/completions", second.base))
        .json(&json!({"messages": [{"role": "user", "content": "token7 question distinct 7"}]}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.headers()["x-semantic-cache"], "hit");
    second.shutdown().await;
}

#[tokio::test]
async fn corrupt_snapshot_aborts_startup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.sgc");
    std::fs::write(&path, b"SGC1\x01garbage").unwrap();
    match Gateway::from_config(&mock_config(&path)) {
        Err(GatewayError::Snapshot { path: p, source: StoreError::CorruptSnapshot(_) }) => assert_eq!(p, path),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("startup succeeded on a corrupt snapshot"),
    }
}

#[test]
fn binary_exits_nonzero_on_corrupt_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("cache.sgc");
    std::fs::write(&snapshot, b"not a snapshot").unwrap();
    let config = dir.path().join("semgate.json");
    std::fs::write(
        &config,
        json!({"listen": "127.0.0.1:0", "upstream": {"kind": "mock"}, "cache": {"snapshot_path": snapshot}})
            .to_string(),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_semgate"))
        .args(["serve", "--config"])
        .arg(&config)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("snapshot"), "{stderr}");
}

#[test]
fn binary_rejects_bad_override() {
    let out = Command::new(env!("CARGO_BIN_EXE_semgate"))
        .args(["config"])
        .env("SEMGATE_CACHE_THRESHOLD", "1.5")
        .output()
        .unwrap();
    assert!(!out.status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_semgate"))
        .args(["config"])
        .env("SEMGATE_CACHE_THRESHOLD", "0.65")
        .env("SEMGATE_UPSTREAM_API_KEY", "sk-secret")
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["cache"]["threshold"], 0.65);
    assert_eq!(cfg["upstream"]["api_key"], "<redacted>");
}

#[tokio::test]
async fn purge_timer_removes_expired_entries() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mock_config(&dir.path().join("cache.sgc"));
    cfg.cache.default_ttl_secs = 1;
    let gateway = Gateway::from_config(&cfg).unwrap();
    let engine = gateway.engine().clone();
    engine.handle_query("short lived answer", None).await.unwrap();
    assert_eq!(engine.store().len(), 1);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let (stop, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(gateway.serve(listener, async move {
        let _ = rx.await;
    }));
    let mut purged = false;
    for _ in 0..40 {
        tokio::time::sleep(Duration::from_millis(100)).await;
        if engine.store().len() == 0 {
            purged = true;
            break;
        }
    }
    stop.send(()).unwrap();
    task.await.unwrap().unwrap();
    assert!(purged, "expired entry was not swept");
}
