use std::path::Path;
use std::process::{Command, Output};

fn edgehar(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_edgehar"));
    cmd.args(args).env_remove("PIPELINE_CLASSIFIER").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seconds: &str) {
    let out = edgehar(&["synth", "--out", path(dir), "--seconds", seconds], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_run_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("stream");
    synth(&stream, "4");
    let config = stream.join("config.json");

    let log = dir.path().join("events.jsonl");
    let out = edgehar(&["run", "--config", path(&config), "--out", path(&log)], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\"status\"")).count(), 60);
    assert!(text.lines().any(|l| l.contains("\"decision\"")));

    let report = dir.path().join("bench.json");
    let out = edgehar(&["bench", "--config", path(&config), "--report", path(&report)], &[]);
    assert!(out.status.success());
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(metrics["frames_in"], 60);
    for stage in ["ingest", "perceive", "track", "crop", "window", "classify", "fuse"] {
        assert!(metrics["stages"][stage]["p95_ms"].is_number(), "{stage}");
    }
}

#[test]
fn eval_oracle_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgehar(&["eval", "--oracle", "--out", path(dir.path())], &[]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "mean top1 1.0000");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_top1"], 1.0);
    for k in 1..=3 {
        assert!(dir.path().join(format!("cm_split{k}.csv")).is_file());
    }
}

#[test]
fn eval_reads_prediction_map() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let entries: Vec<_> = (0..20)
        .map(|i| {
            serde_json::json!({
                "video_id": format!("v{i:02}"),
                "label": if i < 10 { "a" } else { "b" },
                "duration_s": 5.0,
                "source": "test",
            })
        })
        .collect();
    std::fs::write(&manifest, serde_json::json!({ "class_names": ["a", "b"], "entries": entries }).to_string()).unwrap();
    // every video predicted "a": class b is always wrong
    let preds: serde_json::Map<_, _> = (0..20).map(|i| (format!("v{i:02}"), serde_json::json!("a"))).collect();
    let preds_path = dir.path().join("preds.json");
    std::fs::write(&preds_path, serde_json::Value::Object(preds).to_string()).unwrap();
    let out = edgehar(
        &["eval", "--manifest", path(&manifest), "--predictions", path(&preds_path), "--out", path(dir.path())],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "mean top1 0.5000");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");

    let missing = dir.path().join("nope.json");
    let out = edgehar(&["run", "--config", path(&missing), "--out", path(&log)], &[]);
    assert_eq!(out.status.code(), Some(2));

    let stream = dir.path().join("stream");
    synth(&stream, "0.4");
    let config = stream.join("config.json");
    let out = edgehar(
        &["run", "--config", path(&config), "--out", path(&log)],
        &[("PIPELINE_CLASSIFIER", "telepathy")],
    );
    assert_eq!(out.status.code(), Some(2));

    std::fs::remove_file(stream.join("rgb_000002.png")).unwrap();
    let out = edgehar(&["run", "--config", path(&config), "--out", path(&log)], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn classifier_env_override_selects_remote() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("stream");
    synth(&stream, "4");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let out = edgehar(
        &["run", "--config", path(&stream.join("config.json")), "--out", path(&dir.path().join("log"))],
        &[("PIPELINE_CLASSIFIER", &format!("remote:{addr}"))],
    );
    assert_eq!(out.status.code(), Some(4));
}
