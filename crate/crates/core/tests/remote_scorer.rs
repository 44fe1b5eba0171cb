//! Remote DGA scorer wire contract and the pipeline's fallback behavior
//! when the remote endpoint misbehaves or is down.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::thread;
use std::time::Duration;

use mondeo::dga::{BigramModel, RemoteError, RemoteScorer};
use mondeo::fld::SuffixRules;
use mondeo::pipeline::{Pipeline, PipelineConfig};
use mondeo::record::{DnsRequestRecord, QueryType};

/// Minimal one-shot HTTP server: answers every request with `status` and
/// `body`, capturing request bodies.
fn spawn_mock(status: u16, body: &'static str) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            // Read headers, then the declared body length.
            let body_len = loop {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break 0;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_headers_end(&buf) {
                    let headers = String::from_utf8_lossy(&buf[..pos]);
                    let declared = headers
                        .lines()
                        .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
                        .and_then(|l| l.split(':').nth(1))
                        .and_then(|v| v.trim().parse::<usize>().ok())
                        .unwrap_or(0);
                    let mut have = buf.len() - pos - 4;
                    while have < declared {
                        let n = stream.read(&mut chunk).unwrap_or(0);
                        if n == 0 {
                            break;
                        }
                        buf.extend_from_slice(&chunk[..n]);
                        have += n;
                    }
                    break declared;
                }
            };
            let _ = body_len;
            let response = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    addr
}

fn find_headers_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

fn scorer_for(addr: SocketAddr) -> RemoteScorer {
    RemoteScorer::new(format!("http://{addr}/score"), Duration::from_millis(500))
}

#[test]
fn remote_score_passthrough() {
    let addr = spawn_mock(200, r#"{"score": 0.97}"#);
    let score = scorer_for(addr).score("evil.top").unwrap();
    assert_eq!(score.value, 0.97);
    assert_eq!(score.scorer_id, "remote");
}

#[test]
fn out_of_range_score_is_malformed() {
    let addr = spawn_mock(200, r#"{"score": 1.3}"#);
    let err = scorer_for(addr).score("evil.top").unwrap_err();
    assert!(matches!(err, RemoteError::Malformed(_)), "{err}");
}

#[test]
fn junk_payload_is_malformed() {
    let addr = spawn_mock(200, "not json at all");
    let err = scorer_for(addr).score("evil.top").unwrap_err();
    assert!(matches!(err, RemoteError::Malformed(_)), "{err}");
}

#[test]
fn non_200_status_is_unavailable() {
    let addr = spawn_mock(500, r#"{"score": 0.5}"#);
    let err = scorer_for(addr).score("evil.top").unwrap_err();
    assert!(matches!(err, RemoteError::Unavailable(_)), "{err}");
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // Bind then drop, so the port is known-closed.
    let addr = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let scorer = RemoteScorer::new(format!("http://{addr}/score"), Duration::from_millis(200));
    let err = scorer.score("evil.top").unwrap_err();
    assert!(matches!(err, RemoteError::Unavailable(_)), "{err}");
}

fn benign_corpus() -> Vec<String> {
    mondeo::datagen::default_wordlist()
        .into_iter()
        .take(2000)
        .collect()
}

fn test_record(name: &str) -> DnsRequestRecord {
    DnsRequestRecord {
        timestamp: 0.0,
        src_ip: "10.0.0.1".parse().unwrap(),
        dst_ip: "8.8.8.8".parse().unwrap(),
        payload_length: 64,
        flags: 0x0100,
        question_count: 1,
        query_type: QueryType::A,
        query_name: Some(name.to_string()),
    }
}

#[test]
fn pipeline_prefers_remote_when_it_answers() {
    let addr = spawn_mock(200, r#"{"score": 0.97}"#);
    let model = BigramModel::train(
        benign_corpus(),
        &SuffixRules::default(),
        mondeo::dga::DEFAULT_SMOOTHING,
        mondeo::dga::DEFAULT_CALIBRATION_QUANTILES,
    )
    .unwrap();
    let pipeline = Pipeline::new(PipelineConfig {
        dga_model: Some(model),
        remote_url: Some(format!("http://{addr}/score")),
        remote_timeout: Duration::from_millis(500),
        ..Default::default()
    });
    // 0.97 >= upper threshold: infected at phase 3 regardless of what the
    // builtin model would say about this very ordinary name.
    let c = pipeline.process(&test_record("www.google.com")).unwrap();
    assert_eq!(c.exit_phase, 3);
    assert_eq!(c.dga_score, Some(0.97));
    assert_eq!(pipeline.stats().fallback_count, 0);
}

#[test]
fn pipeline_falls_back_to_builtin_when_remote_is_down() {
    use mondeo::forest::{train_forest, ForestParams, LabeledDataset};
    use mondeo::record::extract_features;

    let addr = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let model = BigramModel::train(
        benign_corpus(),
        &SuffixRules::default(),
        mondeo::dga::DEFAULT_SMOOTHING,
        mondeo::dga::DEFAULT_CALIBRATION_QUANTILES,
    )
    .unwrap();
    let reference = BigramModel::train(
        benign_corpus(),
        &SuffixRules::default(),
        mondeo::dga::DEFAULT_SMOOTHING,
        mondeo::dga::DEFAULT_CALIBRATION_QUANTILES,
    )
    .unwrap();
    // A trivial forest so packets with mid-band scores still classify.
    let rows: Vec<_> = (0..40)
        .map(|i| {
            let mut r = test_record("train.example.com");
            r.payload_length = if i % 2 == 1 { 200 } else { 60 };
            (extract_features(&r), (i % 2) as u8)
        })
        .collect();
    let forest = train_forest(
        &LabeledDataset::new(rows, "fallback-test"),
        &ForestParams::default(),
    )
    .unwrap();
    let pipeline = Pipeline::new(PipelineConfig {
        dga_model: Some(model),
        forest: Some(forest),
        remote_url: Some(format!("http://{addr}/score")),
        remote_timeout: Duration::from_millis(100),
        ..Default::default()
    });

    let rules = SuffixRules::default();
    let names = ["x9k2mz8qw1.top", "www.google.com", "deep.sub.datafield.net"];
    for name in names {
        let c = pipeline.process(&test_record(name)).unwrap();
        // Every phase-3 score comes from the builtin model.
        if let Some(score) = c.dga_score {
            assert_eq!(score, reference.score(name, &rules).value, "name {name}");
        }
    }
    let stats = pipeline.stats();
    assert_eq!(stats.fallback_count, stats.phases[2].latency.count);
    assert!(stats.fallback_count >= 1);
    assert_eq!(stats.total_packets, names.len() as u64);
}
