//! End-to-end HTTP tests against a spawned server instance.

use std::net::SocketAddr;
use std::path::Path;

use mondeo::datagen::default_wordlist;
use mondeo::dga::{BigramModel, DEFAULT_CALIBRATION_QUANTILES, DEFAULT_SMOOTHING};
use mondeo::forest::{train_forest, ForestParams, LabeledDataset};
use mondeo::record::{extract_features, DnsRequestRecord, QueryType};
use mondeo::SuffixRules;
use mondeo_service::{spawn, ServerHandle, ServiceConfig};

fn write_models(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let corpus: Vec<String> = default_wordlist().into_iter().take(2000).collect();
    let bigram = BigramModel::train(
        &corpus,
        &SuffixRules::default(),
        DEFAULT_SMOOTHING,
        DEFAULT_CALIBRATION_QUANTILES,
    )
    .unwrap();
    let dga_path = dir.join("dga.json");
    bigram.save_file(&dga_path).unwrap();

    let rows: Vec<_> = (0..100)
        .map(|i| {
            let infected = i % 2 == 1;
            let record = DnsRequestRecord {
                timestamp: i as f64,
                src_ip: "10.0.0.7".parse().unwrap(),
                dst_ip: "8.8.8.8".parse().unwrap(),
                payload_length: if infected { 220 } else { 64 },
                flags: 0x0100,
                question_count: 1,
                query_type: QueryType::A,
                query_name: Some("fixture.example.com".to_string()),
            };
            (extract_features(&record), u8::from(infected))
        })
        .collect();
    let forest = train_forest(
        &LabeledDataset::new(rows, "service-test"),
        &ForestParams {
            n_trees: 10,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let forest_path = dir.join("forest.json");
    forest.save_file(&forest_path).unwrap();
    (forest_path, dga_path)
}

fn start(dir: &Path, mutate: impl FnOnce(&mut ServiceConfig)) -> ServerHandle {
    let (forest, dga) = write_models(dir);
    let mut cfg = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        ..Default::default()
    };
    cfg.models.forest = Some(forest);
    cfg.models.dga = Some(dga);
    mutate(&mut cfg);
    spawn(cfg).unwrap()
}

fn url(addr: SocketAddr, path: &str) -> String {
    format!("http://{addr}{path}")
}

const RECORD: &str = r#"{"ts":0.0,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":64,"flags":256,"questions":1,"qtype":"A","qname":"www.google.com"}"#;

#[test]
fn classify_and_stats_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});

    let health: serde_json::Value = ureq::get(&url(server.addr, "/health"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(health["status"], "ok");

    let fresh: serde_json::Value = ureq::get(&url(server.addr, "/stats"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(fresh["total_packets"], 0);

    let response = ureq::post(&url(server.addr, "/classify"))
        .set("content-type", "application/json")
        .send_string(RECORD)
        .unwrap();
    assert_eq!(response.status(), 200);
    let body: serde_json::Value = response.into_json().unwrap();
    assert!(body["verdict"] == "benign" || body["verdict"] == "infected");
    assert!(body["exit_phase"].as_u64().unwrap() >= 1);

    let stats: serde_json::Value = ureq::get(&url(server.addr, "/stats"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(stats["total_packets"], 1);
    server.stop();
}

#[test]
fn malformed_record_is_field_level_400() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});

    let missing_src = RECORD.replace("\"src_ip\":\"10.0.0.1\",", "");
    let err = ureq::post(&url(server.addr, "/classify"))
        .set("content-type", "application/json")
        .send_string(&missing_src)
        .unwrap_err();
    let ureq::Error::Status(status, response) = err else {
        panic!("expected status error")
    };
    assert_eq!(status, 400);
    let body: serde_json::Value = response.into_json().unwrap();
    assert_eq!(body["error"], "bad_request");
    assert!(
        body["message"].as_str().unwrap().contains("src_ip"),
        "{body}"
    );
    server.stop();
}

#[test]
fn degraded_mode_returns_503_for_phase_four() {
    let dir = tempfile::tempdir().unwrap();
    // No models configured at all.
    let cfg = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        ..Default::default()
    };
    let server = spawn(cfg).unwrap();

    let health: serde_json::Value = ureq::get(&url(server.addr, "/health"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(health["status"], "degraded");

    // A record that reaches phase 4 cannot be classified.
    let err = ureq::post(&url(server.addr, "/classify"))
        .set("content-type", "application/json")
        .send_string(RECORD)
        .unwrap_err();
    let ureq::Error::Status(status, response) = err else {
        panic!("expected status error")
    };
    assert_eq!(status, 503);
    let body: serde_json::Value = response.into_json().unwrap();
    assert_eq!(body["error"], "not_ready");

    // A blacklisted record still exits at phase 1.
    ureq::post(&url(server.addr, "/lists/blacklist"))
        .set("content-type", "application/json")
        .send_string(r#"{"domain":"google.com"}"#)
        .unwrap();
    let ok = ureq::post(&url(server.addr, "/classify"))
        .set("content-type", "application/json")
        .send_string(RECORD)
        .unwrap();
    let body: serde_json::Value = ok.into_json().unwrap();
    assert_eq!(body["verdict"], "infected");
    assert_eq!(body["exit_phase"], 1);
    let _ = dir;
    server.stop();
}

#[test]
fn batch_summary_counts_errors() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});

    let batch = format!("{RECORD}\n{RECORD}\nnot a record\n");
    let summary: serde_json::Value = ureq::post(&url(server.addr, "/classify/batch"))
        .send_string(&batch)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(summary["total"], 3);
    assert_eq!(summary["errors"], 1);
    assert_eq!(
        summary["benign"].as_u64().unwrap() + summary["infected"].as_u64().unwrap(),
        2
    );
    assert!(summary.get("results").is_none());

    let verbose: serde_json::Value = ureq::post(&url(server.addr, "/classify/batch?verbose=1"))
        .send_string(RECORD)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(verbose["results"].as_array().unwrap().len(), 1);
    server.stop();
}

#[test]
fn batch_over_limit_is_413() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |cfg| cfg.service.max_batch_lines = 2);

    let batch = format!("{RECORD}\n{RECORD}\n{RECORD}\n");
    let err = ureq::post(&url(server.addr, "/classify/batch"))
        .send_string(&batch)
        .unwrap_err();
    let ureq::Error::Status(status, response) = err else {
        panic!("expected status error")
    };
    assert_eq!(status, 413);
    let body: serde_json::Value = response.into_json().unwrap();
    assert_eq!(body["error"], "payload_too_large");
    server.stop();
}

#[test]
fn list_management_flow() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});

    // Unknown list kind.
    let err = ureq::post(&url(server.addr, "/lists/greylist"))
        .send_string(r#"{"domain":"x.com"}"#)
        .unwrap_err();
    let ureq::Error::Status(status, _) = err else {
        panic!("expected status error")
    };
    assert_eq!(status, 404);

    // Invalid domain.
    let err = ureq::post(&url(server.addr, "/lists/blacklist"))
        .send_string(r#"{"domain":""}"#)
        .unwrap_err();
    let ureq::Error::Status(status, _) = err else {
        panic!("expected status error")
    };
    assert_eq!(status, 400);

    // Two inserts advance the revision by two.
    let first: serde_json::Value = ureq::post(&url(server.addr, "/lists/blacklist"))
        .send_string(r#"{"domain":"evil.top"}"#)
        .unwrap()
        .into_json()
        .unwrap();
    let second: serde_json::Value = ureq::post(&url(server.addr, "/lists/blacklist"))
        .send_string(r#"{"domain":"worse.ru"}"#)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(
        second["revision"].as_u64().unwrap(),
        first["revision"].as_u64().unwrap() + 1
    );

    let view: serde_json::Value = ureq::get(&url(server.addr, "/lists/blacklist"))
        .call()
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(view["entries"], serde_json::json!(["evil.top", "worse.ru"]));

    // The mutation is visible to classification: FLD match, phase-1 exit.
    let record = RECORD.replace("www.google.com", "c2.evil.top");
    let body: serde_json::Value = ureq::post(&url(server.addr, "/classify"))
        .send_string(&record)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(body["verdict"], "infected");
    assert_eq!(body["exit_phase"], 1);

    // Delete and verify it no longer matches at phase 1.
    let deleted: serde_json::Value = ureq::delete(&url(server.addr, "/lists/blacklist"))
        .send_string(r#"{"domain":"evil.top"}"#)
        .unwrap()
        .into_json()
        .unwrap();
    assert_eq!(deleted["applied"], true);
    let body: serde_json::Value = ureq::post(&url(server.addr, "/classify"))
        .send_string(&record)
        .unwrap()
        .into_json()
        .unwrap();
    assert_ne!(body["exit_phase"], 1);
    server.stop();
}

#[test]
fn bind_error_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    let first = start(dir.path(), |_| {});
    let cfg = ServiceConfig {
        listen: first.addr,
        ..Default::default()
    };
    let err = spawn(cfg);
    assert!(err.is_err());
    first.stop();
}
