use std::path::Path;
use std::sync::Arc;
use std::thread;

use alids_core::dataset::{self, prepare, read_csv, EncodedDataset, EncodedSnapshot};
use alids_core::session::{curve_to_csv, CurvePoint, OracleKind, Session, SessionConfig, StopRule};
use alids_core::synth;
use alids_service::store::{ENCODED_FILE, SPLIT_FILE};
use alids_service::{BackgroundServer, Store};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

/// Writes a prepared blobs dataset under `data_dir/name` and returns its splits.
fn prepare_blobs(data_dir: &Path, name: &str, n: usize, spread: f64) -> (EncodedDataset, EncodedDataset) {
    let schema = synth::blobs_schema();
    let ds = prepare(&read_csv(synth::blobs_csv(n, spread, 5).as_bytes(), &schema).unwrap(), &schema).unwrap();
    let manifest = dataset::split_manifest(&ds, 0.8, 1, false).unwrap();
    let dir = data_dir.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    EncodedSnapshot::new(&schema, &ds, true).save(dir.join(ENCODED_FILE)).unwrap();
    std::fs::write(dir.join(SPLIT_FILE), serde_json::to_string(&manifest).unwrap()).unwrap();
    let split = dataset::materialize(&ds, &manifest).unwrap();
    (split.train, split.test)
}

fn config(budget: usize) -> SessionConfig {
    SessionConfig {
        stop: StopRule {
            label_budget: budget,
            ..StopRule::default()
        },
        seed_count: 4,
        seed: 3,
        ..SessionConfig::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
    snapshots: std::path::PathBuf,
    train: EncodedDataset,
    test: EncodedDataset,
}

fn fixture(spread: f64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let snapshots = dir.path().join("snapshots");
    let (train, test) = prepare_blobs(&data, "blobs", 120, spread);
    Fixture {
        _dir: dir,
        data,
        snapshots,
        train,
        test,
    }
}

fn start(f: &Fixture) -> BackgroundServer {
    let store = Store::open(&f.data, Some(f.snapshots.clone())).unwrap();
    BackgroundServer::start("127.0.0.1:0", Arc::new(store)).unwrap()
}

fn create(client: &Client, server: &BackgroundServer, cfg: &SessionConfig) -> String {
    let resp = client
        .post(server.url("/sessions"))
        .json(&json!({"dataset": "blobs", "config": cfg}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    resp.json::<Value>().unwrap()["session_id"].as_str().unwrap().to_string()
}

fn query_ids(client: &Client, server: &BackgroundServer, id: &str) -> Vec<usize> {
    let q: Value = client.get(server.url(&format!("/sessions/{id}/query"))).send().unwrap().json().unwrap();
    q["items"].as_array().unwrap().iter().map(|i| i["instance_id"].as_u64().unwrap() as usize).collect()
}

fn label(client: &Client, server: &BackgroundServer, id: &str, instance: usize, y: u64) -> reqwest::blocking::Response {
    client
        .post(server.url(&format!("/sessions/{id}/label")))
        .json(&json!({"instance_id": instance, "label": y}))
        .send()
        .unwrap()
}

fn truth(train: &EncodedDataset, id: usize) -> u64 {
    u64::from(train.instances.iter().find(|i| i.id == id).unwrap().label.unwrap())
}

fn curve(client: &Client, server: &BackgroundServer, id: &str) -> Vec<CurvePoint> {
    let v: Value = client.get(server.url(&format!("/sessions/{id}/curve"))).send().unwrap().json().unwrap();
    serde_json::from_value(v["curve"].clone()).unwrap()
}

#[test]
fn health_and_unknown_routes() {
    let f = fixture(0.2);
    let server = start(&f);
    let client = Client::new();
    let health: Value = client.get(server.url("/healthz")).send().unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");
    let resp = client.get(server.url("/nope")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    assert!(resp.json::<Value>().unwrap()["error"].is_string());
    let resp = client.get(server.url("/sessions/missing/metrics")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[test]
fn create_validates_config_and_dataset() {
    let f = fixture(0.2);
    let server = start(&f);
    let client = Client::new();
    let post = |body: Value| client.post(server.url("/sessions")).json(&body).send().unwrap();

    let resp = post(json!({"dataset": "missing", "config": config(20)}));
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let resp = post(json!({"dataset": "../data", "config": config(20)}));
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let resp = post(json!({"dataset": "blobs", "config": {"batch_size": "three"}}));
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["fields"][0]["field"], "config.batch_size");

    let resp = post(json!({"dataset": "blobs", "config": {"batch_size": 0, "stop": {"label_budget": 10}}}));
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let resp = post(json!({"dataset": "blobs", "config": {"stop": {"label_budget": 100000}}}));
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let resp = post(json!({"dataset": "blobs", "config": {"strategy": {"kind": "egl"}, "stop": {"label_budget": 10}}}));
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[test]
fn fresh_session_serves_seed_query_with_decoded_features() {
    let f = fixture(0.2);
    let server = start(&f);
    let client = Client::new();
    let cfg = config(30);
    let id = create(&client, &server, &cfg);

    let local = Session::init(f.train.clone(), f.test.clone(), cfg, OracleKind::External).unwrap();
    let q: Value = client.get(server.url(&format!("/sessions/{id}/query"))).send().unwrap().json().unwrap();
    let ids: Vec<usize> = q["items"].as_array().unwrap().iter().map(|i| i["instance_id"].as_u64().unwrap() as usize).collect();
    assert_eq!(ids, local.pending().unwrap().ids());
    let item = &q["items"][0];
    assert_eq!(item["features"][0]["name"], "x");
    assert_eq!(item["features"][1]["name"], "y");
    assert!(item["posterior"].is_null());
    assert!(item["lof_score"].is_number());
    assert_eq!(q["status"], "awaiting_label");
    assert_eq!(query_ids(&client, &server, &id), ids);
}

#[test]
fn label_errors_and_batch_completion() {
    let f = fixture(0.2);
    let server = start(&f);
    let client = Client::new();
    let id = create(&client, &server, &config(30));
    let ids = query_ids(&client, &server, &id);

    assert_eq!(label(&client, &server, &id, ids[0], 2).status(), StatusCode::BAD_REQUEST);
    let resp = client
        .post(server.url(&format!("/sessions/{id}/label")))
        .json(&json!({"instance_id": ids[0], "label": -1}))
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let outside = f.train.ids().into_iter().find(|i| !ids.contains(i)).unwrap();
    assert_eq!(label(&client, &server, &id, outside, 1).status(), StatusCode::CONFLICT);

    for (n, &i) in ids.iter().enumerate() {
        let resp = label(&client, &server, &id, i, truth(&f.train, i));
        assert_eq!(resp.status(), StatusCode::OK);
        let update: Value = resp.json().unwrap();
        assert_eq!(update["curve_point"].is_null(), n + 1 < ids.len());
    }
    assert_eq!(label(&client, &server, &id, ids[0], 0).status(), StatusCode::CONFLICT);
    assert_eq!(curve(&client, &server, &id).len(), 1);
    let metrics: Value = client.get(server.url(&format!("/sessions/{id}/metrics"))).send().unwrap().json().unwrap();
    assert_eq!(metrics["labels_used"], 4);
    assert_eq!(metrics["latest"]["labels_used"], 4);
}

#[test]
fn stopped_session_returns_conflict() {
    let f = fixture(0.5);
    let server = start(&f);
    let client = Client::new();
    let mut cfg = config(1);
    cfg.seed_count = 1;
    let id = create(&client, &server, &cfg);
    let ids = query_ids(&client, &server, &id);
    assert_eq!(label(&client, &server, &id, ids[0], truth(&f.train, ids[0])).status(), StatusCode::OK);
    let resp = client.get(server.url(&format!("/sessions/{id}/query"))).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    assert_eq!(resp.json::<Value>().unwrap()["status"], "stopped_budget");
}

#[test]
fn concurrent_labels_for_one_id_succeed_once() {
    let f = fixture(0.2);
    let server = start(&f);
    let client = Client::new();
    let id = create(&client, &server, &config(30));
    let target = query_ids(&client, &server, &id)[0];
    let url = server.url(&format!("/sessions/{id}/label"));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let url = url.clone();
            thread::spawn(move || {
                Client::new()
                    .post(url)
                    .json(&json!({"instance_id": target, "label": 1}))
                    .send()
                    .unwrap()
                    .status()
            })
        })
        .collect();
    let statuses: Vec<StatusCode> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
}

#[test]
fn sessions_survive_restart() {
    let f = fixture(0.35);
    let client = Client::new();
    let server = start(&f);
    let id = create(&client, &server, &config(40));
    for _ in 0..2 {
        for i in query_ids(&client, &server, &id) {
            label(&client, &server, &id, i, truth(&f.train, i));
        }
    }
    let pending = query_ids(&client, &server, &id);
    let before = curve(&client, &server, &id);
    server.stop().unwrap();
    assert!(f.snapshots.join(format!("{id}.json")).is_file());

    let server = start(&f);
    assert_eq!(query_ids(&client, &server, &id), pending);
    assert_eq!(curve(&client, &server, &id), before);
}

#[test]
fn api_curve_equals_oracle_run() {
    let f = fixture(0.35);
    let server = start(&f);
    let client = Client::new();
    let mut cfg = config(40);
    cfg.batch_size = 2;
    let id = create(&client, &server, &cfg);
    loop {
        let resp = client.get(server.url(&format!("/sessions/{id}/query"))).send().unwrap();
        if resp.status() == StatusCode::CONFLICT {
            break;
        }
        let q: Value = resp.json().unwrap();
        for item in q["items"].as_array().unwrap() {
            let i = item["instance_id"].as_u64().unwrap() as usize;
            assert_eq!(label(&client, &server, &id, i, truth(&f.train, i)).status(), StatusCode::OK);
        }
    }
    let mut local = Session::init(f.train.clone(), f.test.clone(), cfg, OracleKind::Dataset).unwrap();
    local.run_with_oracle().unwrap();
    assert_eq!(curve_to_csv(&curve(&client, &server, &id)), local.curve_csv());
}
