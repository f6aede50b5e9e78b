use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine;
use motion_context::context::{ContextVocabulary, TransportationContext};
use motion_context::llm::{
    format_response, mock_oracle, request_body, request_hash, Cost, EndpointConfig, FnTransport, HttpRequest,
    HttpResponse, LlmClient, LlmError, NoiseConfig, PromptPayload, QueryStatus, ResponseCache, TransportError,
    UreqTransport,
};
use motion_context::render::RenderConfig;
use motion_context::scenario::{label_gt_intention, IntentionLabel, IntentionThresholds};
use motion_context::synth::synth_fixtures;

fn answer() -> TransportationContext {
    TransportationContext::new(
        vec![IntentionLabel::Straight, IntentionLabel::RightTurn],
        &["Slow-Allow", "Right-Allow"],
        &["Intersection"],
        "",
        &ContextVocabulary::default(),
    )
    .unwrap()
}

fn chat_body(text: &str) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
    }))
    .unwrap()
}

fn fast_config(url: &str) -> EndpointConfig {
    EndpointConfig {
        endpoint_url: url.to_string(),
        backoff_base_ms: 1,
        backoff_max_ms: 4,
        timeout_ms: 5_000,
        ..EndpointConfig::default()
    }
}

fn read_request(stream: &mut TcpStream) -> Vec<u8> {
    let mut reader = BufReader::new(stream);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    body
}

/// Answers one connection per scripted response and returns the request bodies.
fn scripted_server(script: Vec<(u16, Vec<u8>)>) -> (String, JoinHandle<Vec<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            bodies.push(read_request(&mut stream));
            let head = format!(
                "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(&body).unwrap();
        }
        bodies
    });
    (url, handle)
}

fn recording_sleeper() -> (Arc<Mutex<Vec<Duration>>>, motion_context::llm::client::Sleeper) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&log);
    (log, Arc::new(move |d| sink.lock().unwrap().push(d)))
}

#[test]
fn retries_through_rate_limit_responses() {
    let ok = chat_body(&format_response(&answer()));
    let (url, server) = scripted_server(vec![(429, b"slow down".to_vec()), (429, b"slow down".to_vec()), (200, ok)]);
    let (sleeps, sleeper) = recording_sleeper();
    let client = LlmClient::new(fast_config(&url), ContextVocabulary::default(), Box::new(UreqTransport::new()))
        .with_sleeper(sleeper);

    let png = [0x89, b'P', b'N', b'G', 1, 2, 3];
    let record = client.query("s1", PromptPayload { text: "describe", png: &png }).unwrap();
    assert_eq!(record.status, QueryStatus::Ok);
    assert_eq!(record.attempts, 3);
    assert_eq!(record.parsed.as_ref().unwrap().intentions, answer().intentions);
    assert_eq!(client.network_calls(), 3);
    assert_eq!(*sleeps.lock().unwrap(), vec![Duration::from_millis(1), Duration::from_millis(2)]);

    let bodies = server.join().unwrap();
    assert_eq!(bodies.len(), 3);
    assert!(bodies.iter().all(|b| b == &bodies[0]));
    assert_eq!(record.request_hash, request_hash(&bodies[0]));
    let v: serde_json::Value = serde_json::from_slice(&bodies[0]).unwrap();
    assert_eq!(v["model"], "vision-chat");
    assert_eq!(v["messages"][0]["content"][0]["text"], "describe");
    let data = v["messages"][0]["content"][1]["source"]["data"].as_str().unwrap();
    assert_eq!(base64::engine::general_purpose::STANDARD.decode(data).unwrap(), png);
}

#[test]
fn persistent_server_error_gives_up_after_max_attempts() {
    let script = (0..3).map(|_| (503, b"unavailable".to_vec())).collect();
    let (url, server) = scripted_server(script);
    let cfg = EndpointConfig { max_retries: 3, ..fast_config(&url) };
    let client = LlmClient::new(cfg, ContextVocabulary::default(), Box::new(UreqTransport::new()))
        .with_sleeper(Arc::new(|_| {}));
    match client.query("s1", PromptPayload { text: "t", png: &[] }) {
        Err(LlmError::Api { status: 503, attempts: 3, .. }) => {}
        other => panic!("expected api error, got {other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 3);
    assert_eq!(client.ledger().total(), Cost::ZERO);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = scripted_server(vec![(400, b"bad request".to_vec())]);
    let client = LlmClient::new(fast_config(&url), ContextVocabulary::default(), Box::new(UreqTransport::new()));
    match client.query("s1", PromptPayload { text: "t", png: &[] }) {
        Err(LlmError::Api { status: 400, attempts: 1, body }) => assert_eq!(body, "bad request"),
        other => panic!("expected api error, got {other:?}"),
    }
    server.join().unwrap();
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let held = std::thread::spawn(move || {
        let mut open = Vec::new();
        for _ in 0..2 {
            open.push(listener.accept().unwrap().0);
        }
        std::thread::sleep(Duration::from_millis(500));
    });
    let cfg = EndpointConfig { max_retries: 2, timeout_ms: 150, ..fast_config(&url) };
    let client = LlmClient::new(cfg, ContextVocabulary::default(), Box::new(UreqTransport::new()))
        .with_sleeper(Arc::new(|_| {}));
    match client.query("s1", PromptPayload { text: "t", png: &[] }) {
        Err(LlmError::Timeout { attempts: 2 }) => {}
        other => panic!("expected timeout, got {other:?}"),
    }
    held.join().unwrap();
}

fn counting_transport(calls: Arc<AtomicUsize>) -> Box<FnTransport<impl Fn(&HttpRequest) -> Result<HttpResponse, TransportError>>> {
    Box::new(FnTransport(move |_req: &HttpRequest| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(HttpResponse { status: 200, body: chat_body(&format_response(&answer())) })
    }))
}

#[test]
fn cached_request_is_sent_once() {
    let dir = tempfile::tempdir().unwrap();
    let calls = Arc::new(AtomicUsize::new(0));
    let cfg = EndpointConfig::default();
    let payload = PromptPayload { text: "same prompt", png: b"img" };

    let client = LlmClient::new(cfg.clone(), ContextVocabulary::default(), counting_transport(Arc::clone(&calls)))
        .with_cache(ResponseCache::new(dir.path()));
    let first = client.query("s1", payload).unwrap();
    let second = client.query("s1", payload).unwrap();
    assert_eq!(first, second);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert_eq!(first.request_hash, request_hash(&request_body(&cfg, payload)));

    let fresh = LlmClient::new(cfg, ContextVocabulary::default(), counting_transport(Arc::clone(&calls)))
        .with_cache(ResponseCache::new(dir.path()));
    assert_eq!(fresh.query("s1", payload).unwrap(), first);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert_eq!(fresh.ledger().total(), Cost::ZERO);
}

#[test]
fn credential_goes_in_header_only() {
    let seen = Arc::new(Mutex::new(None));
    let sink = Arc::clone(&seen);
    let transport = FnTransport(move |req: &HttpRequest| {
        *sink.lock().unwrap() = Some(req.clone());
        Ok(HttpResponse { status: 200, body: chat_body(&format_response(&answer())) })
    });
    let client = LlmClient::new(EndpointConfig::default(), ContextVocabulary::default(), Box::new(transport))
        .with_api_key(Some("sk-test-123".into()));
    client.query("s1", PromptPayload { text: "t", png: &[] }).unwrap();
    let req = seen.lock().unwrap().clone().unwrap();
    assert!(req.headers.contains(&("Authorization".to_string(), "Bearer sk-test-123".to_string())));
    assert!(!String::from_utf8_lossy(&req.body).contains("sk-test-123"));
}

#[test]
fn eleventh_call_exceeds_one_unit_cap() {
    let calls = Arc::new(AtomicUsize::new(0));
    let cfg = EndpointConfig { budget_cap: 1.00, cost_per_call: 0.10, ..EndpointConfig::default() };
    let client = LlmClient::new(cfg, ContextVocabulary::default(), counting_transport(Arc::clone(&calls)));
    let mut records = Vec::new();
    for i in 0..10 {
        let text = format!("prompt {i}");
        records.push(client.query(&format!("s{i}"), PromptPayload { text: &text, png: &[] }).unwrap());
    }
    match client.query("s10", PromptPayload { text: "prompt 10", png: &[] }) {
        Err(LlmError::BudgetExceeded(e)) => assert_eq!(e.spent, Cost(1_000_000)),
        other => panic!("expected budget error, got {other:?}"),
    }
    assert_eq!(calls.load(Ordering::SeqCst), 10);
    let total: Cost = records.iter().map(|r| r.estimated_cost).sum();
    assert_eq!(total, client.ledger().total());
    assert_eq!(total, Cost(1_000_000));
}

#[test]
fn concurrent_batch_never_overshoots_cap() {
    let calls = Arc::new(AtomicUsize::new(0));
    let cfg = EndpointConfig { budget_cap: 1.00, cost_per_call: 0.10, concurrency: 4, ..EndpointConfig::default() };
    let client = LlmClient::new(cfg, ContextVocabulary::default(), counting_transport(Arc::clone(&calls)));
    let items: Vec<(String, Vec<u8>, String)> =
        (0..25).map(|i| (format!("s{i}"), Vec::new(), format!("prompt {i}"))).collect();
    let results = client.query_batch(&items);
    let ok: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    assert_eq!(ok.len(), 10);
    assert!(results.iter().filter(|r| r.is_err()).all(|r| matches!(r, Err(LlmError::BudgetExceeded(_)))));
    assert_eq!(calls.load(Ordering::SeqCst), 10);
    assert_eq!(ok.iter().map(|r| r.estimated_cost).sum::<Cost>(), client.ledger().total());
    assert_eq!(client.ledger().entries().len(), 10);
}

#[test]
fn reported_usage_sets_cost() {
    let transport = FnTransport(|_req: &HttpRequest| {
        let body = serde_json::json!({
            "choices": [{"message": {"content": format_response(&answer())}}],
            "usage": {"prompt_tokens": 500, "completion_tokens": 100},
        });
        Ok(HttpResponse { status: 200, body: serde_json::to_vec(&body).unwrap() })
    });
    let cfg = EndpointConfig {
        cost_per_call: 0.0,
        cost_per_1k_prompt_tokens: 1.0,
        cost_per_1k_completion_tokens: 2.0,
        ..EndpointConfig::default()
    };
    let client = LlmClient::new(cfg, ContextVocabulary::default(), Box::new(transport));
    let r = client.query("s1", PromptPayload { text: "t", png: &[] }).unwrap();
    assert_eq!((r.prompt_tokens, r.completion_tokens), (500, 100));
    assert_eq!(r.estimated_cost, Cost(700_000));
    assert_eq!(client.ledger().total(), Cost(700_000));
}

#[test]
fn unparseable_answer_is_recorded_not_raised() {
    let transport = FnTransport(|_req: &HttpRequest| Ok(HttpResponse { status: 200, body: chat_body("no idea") }));
    let client = LlmClient::new(EndpointConfig::default(), ContextVocabulary::default(), Box::new(transport));
    let r = client.query("s1", PromptPayload { text: "t", png: &[] }).unwrap();
    assert_eq!(r.status, QueryStatus::ParseFailed);
    assert!(r.parsed.is_none() && r.error.is_some());
    assert_eq!(r.estimated_cost, client.ledger().total());
}

#[test]
fn mock_noise_rate_matches_configuration() {
    let scenarios = synth_fixtures(10_000, 11).unwrap();
    let vocab = ContextVocabulary::default();
    let render = RenderConfig::default();
    let th = IntentionThresholds::default();
    let truth: Vec<IntentionLabel> = scenarios.iter().map(|s| label_gt_intention(s, "ego", &th).unwrap()).collect();
    let noisy = NoiseConfig { noise: 0.17, seed: 3, ..NoiseConfig::default() };
    let hits = scenarios
        .iter()
        .zip(&truth)
        .filter(|(s, &t)| mock_oracle(s, &noisy, &vocab, &render).unwrap().intentions[0] == t)
        .count();
    let acc = hits as f64 / scenarios.len() as f64;
    assert!((acc - 0.83).abs() <= 0.01, "first-intention accuracy {acc}");

    let clean = NoiseConfig { noise: 0.0, ..noisy.clone() };
    for (s, &t) in scenarios.iter().zip(&truth).take(500) {
        assert_eq!(mock_oracle(s, &clean, &vocab, &render).unwrap().intentions[0], t);
    }
}

#[test]
fn full_noise_is_always_wrong_and_reproducible() {
    let scenarios = synth_fixtures(200, 4).unwrap();
    let vocab = ContextVocabulary::default();
    let render = RenderConfig::default();
    let cfg = NoiseConfig { noise: 1.0, seed: 9, ..NoiseConfig::default() };
    for s in &scenarios {
        let truth = label_gt_intention(s, "ego", &cfg.thresholds).unwrap();
        let a = mock_oracle(s, &cfg, &vocab, &render).unwrap();
        let b = mock_oracle(s, &cfg, &vocab, &render).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.intentions[0], truth);
    }
}
