use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use hoprouter_core::backends::{Backend, ModelSpec, RemoteBackend, RemoteConfig};
use hoprouter_core::BackendError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Clone)]
struct Canned {
    status: u16,
    body: String,
    delay_ms: u64,
}

fn ok(body: Value) -> Canned {
    Canned {
        status: 200,
        body: body.to_string(),
        delay_ms: 0,
    }
}

fn status(code: u16) -> Canned {
    Canned {
        status: code,
        body: r#"{"error":"upstream"}"#.into(),
        delay_ms: 0,
    }
}

#[derive(Debug, Clone)]
struct Seen {
    headers: Vec<String>,
    body: Value,
}

/// Serves `responses` in order (the last one repeats), one request per connection.
struct StubServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
        headers.push(line);
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen {
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    })
}

impl StubServer {
    fn start(responses: Vec<Canned>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                log.lock().unwrap().push(req);
                let r = &responses[i.min(responses.len() - 1)];
                thread::sleep(Duration::from_millis(r.delay_ms));
                let msg = format!(
                    "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                    r.status,
                    r.body.len(),
                    r.body
                );
                let _ = stream.write_all(msg.as_bytes());
            }
        });
        StubServer { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn backend(url: &str, retries: u32, timeout_ms: u64, api_key_env: Option<&str>) -> RemoteBackend {
    let spec = ModelSpec {
        name: "upstream".into(),
        base_rate: 0.002,
        kind: "remote".into(),
        params: Value::Null,
    };
    RemoteBackend::new(
        spec,
        RemoteConfig {
            url: url.into(),
            model: "stub-model".into(),
            timeout_ms,
            retries,
            backoff_ms: 5,
            max_tokens: 64,
            api_key_env: api_key_env.map(String::from),
        },
    )
    .unwrap()
}

fn completion(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[test]
fn echo_ok_counts_tokens_locally_without_usage() {
    let server = StubServer::start(vec![ok(completion("ok"))]);
    let out = backend(&server.url, 2, 5_000, None)
        .generate("one two three", &mut rng())
        .unwrap();
    assert_eq!(out.text, "ok");
    assert_eq!((out.tokens_in, out.tokens_out), (3, 1));
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].body["model"], "stub-model");
    assert_eq!(reqs[0].body["messages"][0]["content"], "one two three");
    assert_eq!(reqs[0].body["messages"][0]["role"], "user");
    assert_eq!(reqs[0].body["max_tokens"], 64);
}

#[test]
fn reported_usage_takes_precedence() {
    let mut body = completion("a b");
    body["usage"] = json!({"prompt_tokens": 17, "completion_tokens": 5});
    let server = StubServer::start(vec![ok(body)]);
    let out = backend(&server.url, 0, 5_000, None)
        .generate("x", &mut rng())
        .unwrap();
    assert_eq!((out.tokens_in, out.tokens_out), (17, 5));
}

#[test]
fn persistent_server_error_exhausts_retries() {
    let server = StubServer::start(vec![status(500)]);
    let err = backend(&server.url, 2, 5_000, None)
        .generate("q", &mut rng())
        .unwrap_err();
    assert_eq!(err, BackendError::HttpStatus(500));
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn transient_errors_recover() {
    let server = StubServer::start(vec![status(503), status(429), ok(completion("fine"))]);
    let out = backend(&server.url, 2, 5_000, None)
        .generate("q", &mut rng())
        .unwrap();
    assert_eq!(out.text, "fine");
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![status(400)]);
    let err = backend(&server.url, 3, 5_000, None)
        .generate("q", &mut rng())
        .unwrap_err();
    assert_eq!(err, BackendError::HttpStatus(400));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let server = StubServer::start(vec![
        Canned {
            status: 200,
            body: "not json".into(),
            delay_ms: 0,
        },
        ok(json!({"choices": []})),
    ]);
    let b = backend(&server.url, 0, 5_000, None);
    assert!(matches!(
        b.generate("q", &mut rng()),
        Err(BackendError::MalformedResponse(_))
    ));
    assert!(matches!(
        b.generate("q", &mut rng()),
        Err(BackendError::MalformedResponse(_))
    ));
}

#[test]
fn slow_upstream_times_out() {
    let server = StubServer::start(vec![Canned {
        delay_ms: 1_000,
        ..ok(completion("late"))
    }]);
    let err = backend(&server.url, 0, 150, None)
        .generate("q", &mut rng())
        .unwrap_err();
    assert_eq!(err, BackendError::Timeout(150));
}

#[test]
fn bearer_token_is_sent() {
    std::env::set_var("HOPROUTER_TEST_STUB_KEY", "s3cret");
    let server = StubServer::start(vec![ok(completion("ok"))]);
    backend(&server.url, 0, 5_000, Some("HOPROUTER_TEST_STUB_KEY"))
        .generate("q", &mut rng())
        .unwrap();
    let reqs = server.requests();
    assert!(reqs[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer s3cret")));
}

#[test]
fn unreachable_upstream_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(&url, 1, 2_000, None)
        .generate("q", &mut rng())
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
}

#[test]
fn empty_input_rejected_before_any_request() {
    let server = StubServer::start(vec![ok(completion("ok"))]);
    let err = backend(&server.url, 0, 5_000, None)
        .generate("  ", &mut rng())
        .unwrap_err();
    assert_eq!(err, BackendError::EmptyInput);
    assert!(server.requests().is_empty());
}
