use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use binlift_client::{extract_code, Client, ClientError, DecodeConfig, EndpointConfig, RetryPolicy};
use proptest::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct Seen {
    body: Value,
    raw: Vec<u8>,
    auth: Option<String>,
}

/// One-thread-per-connection HTTP/1.1 stand-in for a chat endpoint.
struct Mock {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> (Vec<u8>, Option<String>) {
    let mut reader = BufReader::new(stream);
    let (mut len, mut auth) = (0, None);
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (name, value) = line.split_once(':').unwrap_or((line, ""));
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().unwrap(),
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (body, auth)
}

impl Mock {
    fn start(delay: Duration, handler: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let peak = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (seen2, peak2) = (seen.clone(), peak.clone());
        let live = Arc::new(AtomicUsize::new(0));
        thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = stream.unwrap();
                let (seen, peak, live, handler) = (seen2.clone(), peak2.clone(), live.clone(), handler.clone());
                thread::spawn(move || {
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    let (raw, auth) = read_request(&mut stream);
                    let body: Value = serde_json::from_slice(&raw).unwrap();
                    let index = {
                        let mut s = seen.lock().unwrap();
                        s.push(Seen { body: body.clone(), raw, auth });
                        s.len() - 1
                    };
                    thread::sleep(delay);
                    let (status, reply) = handler(index, &body);
                    live.fetch_sub(1, Ordering::SeqCst);
                    let head = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                        reply.len()
                    );
                    let _ = stream.write_all(head.as_bytes());
                    let _ = stream.write_all(reply.as_bytes());
                });
            }
        });
        Self { url, seen, peak }
    }

    fn requests(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

fn completion(texts: &[String]) -> String {
    let choices: Vec<Value> = texts.iter().map(|t| json!({"message": {"role": "assistant", "content": t}})).collect();
    json!({"model": "mock-1", "choices": choices}).to_string()
}

fn endpoint(url: &str) -> EndpointConfig {
    EndpointConfig {
        url: url.into(),
        model: "mock".into(),
        retry: RetryPolicy { max_retries: 2, base_delay_ms: 5, max_delay_ms: 20 },
        request_timeout_secs: 5,
        ..Default::default()
    }
}

const CANNED: &str = "Here you go:\n```c\nint add(int a, int b)\n{\n    return a + b;\n}\n```\n";

#[test]
fn greedy_returns_the_canned_completion() {
    let mock = Mock::start(Duration::ZERO, |_, _| (200, completion(&[CANNED.into()])));
    let client = Client::new(endpoint(&mock.url)).unwrap();
    let a = client.generate("PROMPT", &DecodeConfig::greedy()).unwrap();
    assert_eq!(a.len(), 1);
    assert_eq!((a[0].text.as_str(), a[0].sample_index, a[0].model_id.as_str()), (CANNED, 0, "mock-1"));
    assert_eq!(a[0].extracted_source.as_deref(), Some("int add(int a, int b)\n{\n    return a + b;\n}"));

    let b = client.generate("PROMPT", &DecodeConfig::greedy()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let seen = mock.seen.lock().unwrap();
    let req = &seen[0].body;
    assert_eq!(req["messages"], json!([{"role": "user", "content": "PROMPT"}]));
    assert_eq!((req["n"].as_u64(), req["temperature"].as_f64(), req["max_tokens"].as_u64()), (Some(1), Some(0.0), Some(4096)));
    assert_eq!(req["model"], "mock");
    assert!(seen[0].auth.is_none());
}

#[test]
fn sampled_fills_all_twenty_slots_in_order() {
    // Caps each response at 8 choices, so the client must ask three times.
    let mock = Mock::start(Duration::ZERO, |i, req| {
        let n = req["n"].as_u64().unwrap().min(8) as usize;
        (200, completion(&(0..n).map(|j| format!("int f(void) {{ return {}; }}", i * 8 + j)).collect::<Vec<_>>()))
    });
    let client = Client::new(endpoint(&mock.url)).unwrap();
    let cands = client.generate("p", &DecodeConfig::sampled()).unwrap();
    assert_eq!(cands.len(), 20);
    for (i, c) in cands.iter().enumerate() {
        assert_eq!(c.sample_index as usize, i);
        assert_eq!(c.extracted_source.as_deref(), Some(format!("int f(void) {{ return {i}; }}").as_str()));
    }
    let seen = mock.seen.lock().unwrap();
    let asked: Vec<u64> = seen.iter().map(|s| s.body["n"].as_u64().unwrap()).collect();
    assert_eq!(asked, [20, 12, 4]);
    assert_eq!((seen[0].body["temperature"].as_f64(), seen[0].body["top_p"].as_f64()), (Some(0.2), Some(0.95)));
}

#[test]
fn transient_failures_are_retried_and_archived() {
    let mock = Mock::start(Duration::ZERO, |i, _| if i < 2 { (503, "{\"error\":\"busy\"}".into()) } else { (200, completion(&["int x;".into()])) });
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("exchanges.jsonl");
    let client = Client::new(EndpointConfig { archive: Some(archive.clone()), ..endpoint(&mock.url) }).unwrap();
    let cands = client.generate("p", &DecodeConfig::greedy()).unwrap();
    assert_eq!(cands[0].text, "int x;");
    assert_eq!(mock.requests(), 3);

    let lines: Vec<Value> =
        std::fs::read_to_string(&archive).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    let statuses: Vec<u64> = lines.iter().map(|l| l["status"].as_u64().unwrap()).collect();
    assert_eq!(statuses, [503, 503, 200]);
    let seen = mock.seen.lock().unwrap();
    for (line, req) in lines.iter().zip(seen.iter()) {
        assert_eq!(line["request_sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&req.raw)));
        let resp = line["response"].as_str().unwrap();
        assert_eq!(line["response_sha256"].as_str().unwrap(), hex::encode(Sha256::digest(resp.as_bytes())));
    }
}

#[test]
fn client_errors_are_not_retried() {
    let mock = Mock::start(Duration::ZERO, |_, _| (400, "{\"error\":\"bad model\"}".into()));
    let client = Client::new(endpoint(&mock.url)).unwrap();
    match client.generate("p", &DecodeConfig::greedy()) {
        Err(ClientError::EndpointRejected { status: 400, body }) => assert!(body.contains("bad model")),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(mock.requests(), 1);
}

#[test]
fn persistent_server_errors_end_in_rejection() {
    let mock = Mock::start(Duration::ZERO, |_, _| (500, "oops".into()));
    let client = Client::new(endpoint(&mock.url)).unwrap();
    assert!(matches!(client.generate("p", &DecodeConfig::greedy()), Err(ClientError::EndpointRejected { status: 500, .. })));
    assert_eq!(mock.requests(), 3);
}

#[test]
fn unreachable_endpoint_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = Client::new(endpoint(&format!("http://127.0.0.1:{port}/v1/chat/completions"))).unwrap();
    match client.generate("p", &DecodeConfig::greedy()) {
        Err(ClientError::EndpointUnreachable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected unreachable, got {other:?}"),
    }
}

#[test]
fn blank_completion_is_an_error() {
    let mock = Mock::start(Duration::ZERO, |_, _| (200, completion(&["  \n".into()])));
    let client = Client::new(endpoint(&mock.url)).unwrap();
    assert!(matches!(client.generate("p", &DecodeConfig::greedy()), Err(ClientError::EmptyCompletion)));
}

#[test]
fn api_key_comes_from_the_named_variable() {
    let mock = Mock::start(Duration::ZERO, |_, _| (200, completion(&["x".into()])));
    let var = "BINLIFT_CLIENT_TEST_KEY";
    let cfg = EndpointConfig { api_key_env: Some(var.into()), ..endpoint(&mock.url) };
    std::env::remove_var(var);
    assert!(matches!(Client::new(cfg.clone()), Err(ClientError::MissingApiKey(v)) if v == var));
    std::env::set_var(var, "sk-test");
    Client::new(cfg).unwrap().generate("p", &DecodeConfig::greedy()).unwrap();
    assert_eq!(mock.seen.lock().unwrap()[0].auth.as_deref(), Some("Bearer sk-test"));
}

#[test]
fn batch_keeps_order_and_bounds_in_flight_requests() {
    let mock = Mock::start(Duration::from_millis(40), |_, req| {
        let prompt = req["messages"][0]["content"].as_str().unwrap().to_string();
        (200, completion(&[format!("echo {prompt}")]))
    });
    let client = Client::new(EndpointConfig { concurrency: 2, ..endpoint(&mock.url) }).unwrap();
    let prompts: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
    let refs: Vec<&str> = prompts.iter().map(String::as_str).collect();
    let results = client.generate_batch(&refs, &DecodeConfig::greedy());
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.as_ref().unwrap()[0].text, format!("echo p{i}"));
    }
    assert_eq!(mock.requests(), 6);
    assert!(mock.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn invalid_decode_settings_are_refused() {
    let client = Client::new(endpoint("http://127.0.0.1:9/x")).unwrap();
    let cfg = DecodeConfig { n: 3, ..DecodeConfig::greedy() };
    assert!(matches!(client.generate("p", &cfg), Err(ClientError::InvalidConfig(_))));
}

/// Shapes seen in chat completions from code models.
const COMPLETIONS: &[(&str, Option<&str>)] = &[
    ("```c\nint f(){return 0;}\n```", Some("int f(){return 0;}")),
    ("The decompiled function is:\n\n```C\nunsigned g(unsigned x)\n{\n    return x >> 1;\n}\n```\n\nThis shifts right.", Some("unsigned g(unsigned x)\n{\n    return x >> 1;\n}")),
    ("```\nvoid h(void) { }\n```\n```c\nint other;\n```", Some("void h(void) { }")),
    ("No code could be recovered.", None),
    ("static int k(int a)\n{\n    /* } */\n    return a;\n}\n\nExplanation follows.", Some("static int k(int a)\n{\n    /* } */\n    return a;\n}")),
];

#[test]
fn completion_fixtures() {
    for (text, want) in COMPLETIONS {
        assert_eq!(extract_code(text).as_deref(), *want, "{text:?}");
    }
}

proptest! {
    #[test]
    fn extraction_never_leaks_fences(parts in prop::collection::vec(prop_oneof![
        Just("```".to_string()), Just("```c\n".to_string()), Just("\n".to_string()),
        Just("int f() {".to_string()), Just("}".to_string()), "[ -~]{0,12}",
    ], 0..12)) {
        let text = parts.concat();
        if let Some(code) = extract_code(&text) {
            prop_assert!(!code.contains("```"));
            prop_assert!(!code.trim().is_empty());
        }
    }
}
