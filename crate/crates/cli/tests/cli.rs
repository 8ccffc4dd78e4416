use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use alids_core::bench::BenchSummary;
use alids_core::dataset::SplitManifest;
use alids_core::outlier;
use alids_core::synth;
use serde_json::{json, Value};

fn alids(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alids")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_csv(dir: &Path, rows: usize) -> (PathBuf, PathBuf) {
    let csv = dir.join("toy.csv");
    let schema = dir.join("schema.json");
    fs::write(&csv, synth::blobs_csv(rows, 0.1, 1)).unwrap();
    fs::write(&schema, serde_json::to_string(&synth::blobs_schema()).unwrap()).unwrap();
    (csv, schema)
}

#[test]
fn prepare_splits_eighty_twenty_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = toy_csv(dir.path(), 100);
    let out = dir.path().join("prepared");
    let run = || {
        let o = alids(&["prepare", "--csv", s(&csv), "--schema", s(&schema), "--out", s(&out), "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert!(stdout.contains("normal 50, attack 50"), "{stdout}");
        serde_json::from_str::<SplitManifest>(&fs::read_to_string(out.join("split.json")).unwrap()).unwrap()
    };
    let first = run();
    assert_eq!(first.train_ids.len(), 80);
    assert_eq!(first.test_ids.len(), 20);
    let mut all: Vec<usize> = first.train_ids.iter().chain(&first.test_ids).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!(run(), first);
    assert!(out.join("encoded.json").is_file());
}

#[test]
fn prepare_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = toy_csv(dir.path(), 10);
    let out = dir.path().join("o");
    let missing = dir.path().join("missing.json");
    let o = alids(&["prepare", "--csv", s(&csv), "--schema", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert_eq!(alids(&["prepare", "--csv", s(&csv)]).status.code(), Some(2));
    assert_eq!(alids(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn prepare_reports_bad_rows_with_file_context() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = toy_csv(dir.path(), 10);
    fs::write(&csv, "x,y,label\n0.1,0.2,normal\n0.3,oops,attack\n").unwrap();
    let o = alids(&["prepare", "--csv", s(&csv), "--schema", s(&schema), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("toy.csv") && err.contains("oops"), "{err}");
}

fn square_with_outlier(dir: &Path) -> PathBuf {
    let csv = dir.join("square.csv");
    fs::write(&csv, "x,y,label\n0,0,normal\n0,1,normal\n1,0,normal\n1,1,normal\n3,3,attack\n").unwrap();
    let schema = dir.join("schema.json");
    fs::write(&schema, serde_json::to_string(&synth::blobs_schema()).unwrap()).unwrap();
    let out = dir.join("square");
    let o = alids(&["prepare", "--csv", s(&csv), "--schema", s(&schema), "--out", s(&out), "--train-fraction", "0.6"]);
    assert!(o.status.success());
    out
}

#[test]
fn lof_ranks_outlier_first_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = square_with_outlier(dir.path());
    let scores_path = dir.path().join("scores.csv");
    let o = alids(&["lof", "--snapshot", s(&prepared), "--k", "2", "--out", s(&scores_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scores = outlier::read_scores_csv(&scores_path).unwrap();
    let ranking = outlier::rank_pool(&scores, 1.0);
    assert_eq!(ranking[0], 4);
    // Min-max scaling maps the square to side 1/3 with the outlier at (1, 1);
    // LOF is scale invariant, so the score is the unscaled one.
    let expected = (2.0 * 2f64.sqrt() + 13f64.sqrt()) / 2.0;
    assert!((scores[4].score - expected).abs() < 1e-12);
    let again = dir.path().join("again.csv");
    alids(&["lof", "--snapshot", s(&prepared.join("encoded.json")), "--k", "2", "--out", s(&again)]);
    assert_eq!(outlier::rank_pool(&outlier::read_scores_csv(&again).unwrap(), 1.0), ranking);
}

#[test]
fn lof_with_k_at_least_n_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = square_with_outlier(dir.path());
    let o = alids(&["lof", "--snapshot", s(&prepared), "--k", "5", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn bench_config(dir: &Path, rows: usize, spread: f64, extra: Value) -> PathBuf {
    let (csv, schema) = (dir.join("bench.csv"), dir.join("schema.json"));
    fs::write(&csv, synth::blobs_csv(rows, spread, 21)).unwrap();
    fs::write(&schema, serde_json::to_string(&synth::blobs_schema()).unwrap()).unwrap();
    let mut config = json!({
        "dataset": "bench.csv",
        "schema": "schema.json",
        "strategies": [{"kind": "uncertainty"}, {"kind": "random"}],
        "stop": {"precision_min": 0.99, "recall_min": 0.99, "label_budget": 200, "max_rounds": 10000},
        "output_dir": "out"
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("bench.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run_bench(config: &Path) -> BenchSummary {
    let o = alids(&["bench", "--config", s(config)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = config.parent().unwrap().join("out");
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn bench_uncertainty_beats_random_on_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_bench(&bench_config(dir.path(), 500, 0.1, json!({"repetitions": 20})));
    let unc = summary.strategy("uncertainty-entropy").unwrap();
    let rnd = summary.strategy("random").unwrap();
    let (u, r) = (unc.median_labels_to_success, rnd.median_labels_to_success);
    println!("blobs median labels: uncertainty {u:?}, random {r:?}");
    assert!(u.is_some(), "{summary:?}");
    assert!(r.is_none() || u.unwrap() < r.unwrap(), "{summary:?}");
    let curves = dir.path().join("out/curves");
    assert_eq!(fs::read_dir(curves).unwrap().count(), 40);
}

#[test]
fn bench_single_repetition_median_is_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_bench(&bench_config(dir.path(), 200, 0.2, json!({"repetitions": 1, "seeds": [9], "stop": {"precision_min": 0.99, "recall_min": 0.99, "label_budget": 100, "max_rounds": 10000}})));
    for s in &summary.strategies {
        let curve = fs::read_to_string(dir.path().join(format!("out/curves/{}_seed9.csv", s.strategy))).unwrap();
        let last = curve.lines().last().unwrap();
        let labels: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
        if s.successes == 1 {
            assert_eq!(s.median_labels_to_success, Some(labels));
        } else {
            assert_eq!(s.median_labels_to_success, None);
        }
    }
}

#[test]
fn bench_unreachable_thresholds_are_marked() {
    let dir = tempfile::tempdir().unwrap();
    let config = bench_config(
        dir.path(),
        100,
        0.5,
        json!({"repetitions": 3, "stop": {"precision_min": 1.0, "recall_min": 1.0, "label_budget": 15, "max_rounds": 100}}),
    );
    let summary = run_bench(&config);
    for s in &summary.strategies {
        assert!(s.threshold_not_reached);
        assert_eq!(s.successes, 0);
        assert_eq!(s.median_labels_to_success, None);
    }
}

#[test]
fn bench_bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = bench_config(dir.path(), 50, 0.2, json!({"strategies": []}));
    assert_eq!(alids(&["bench", "--config", s(&config)]).status.code(), Some(2));
    assert_eq!(alids(&["bench", "--config", s(&dir.path().join("none.json"))]).status.code(), Some(2));
}

struct Served(Child);

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_serve(addr: &str, data: &Path, snapshots: &Path) -> Served {
    let child = Command::new(env!("CARGO_BIN_EXE_alids"))
        .args(["serve", "--addr", addr, "--data-dir", s(data), "--snapshot-dir", s(snapshots)])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    Served(child)
}

fn wait_listening(served: &mut Served) -> String {
    let stdout = served.0.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    line.trim().trim_start_matches("listening on ").to_string()
}

#[test]
fn serve_health_probe_and_occupied_port() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let snapshots = dir.path().join("snapshots");
    fs::create_dir_all(&data).unwrap();

    let mut served = spawn_serve("127.0.0.1:0", &data, &snapshots);
    let base = wait_listening(&mut served);
    let health: Value = reqwest::blocking::get(format!("{base}/healthz")).unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = alids(&["serve", "--addr", &addr, "--data-dir", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
}

#[cfg(unix)]
#[test]
fn serve_snapshots_sessions_on_shutdown_signal() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = toy_csv(dir.path(), 60);
    let data = dir.path().join("data");
    let snapshots = dir.path().join("snapshots");
    let o = alids(&["prepare", "--csv", s(&csv), "--schema", s(&schema), "--out", s(&data.join("toy"))]);
    assert!(o.status.success());

    let mut served = spawn_serve("127.0.0.1:0", &data, &snapshots);
    let base = wait_listening(&mut served);
    let client = reqwest::blocking::Client::new();
    let created: Value = client
        .post(format!("{base}/sessions"))
        .json(&json!({"dataset": "toy", "config": {"stop": {"label_budget": 20}}}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let id = created["session_id"].as_str().unwrap().to_string();
    let snapshot = snapshots.join(format!("{id}.json"));
    fs::remove_file(&snapshot).unwrap();

    let pid = served.0.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    for _ in 0..100 {
        if let Ok(Some(status)) = served.0.try_wait() {
            assert!(status.success());
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    assert!(snapshot.is_file());
}
