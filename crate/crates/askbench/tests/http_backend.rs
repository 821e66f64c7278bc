//! Exercises the live HTTP backend against a loopback server: request shape,
//! retry policy, auth header, and error surfacing.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use askbench::backend::{Backend, BackendConfig, BackendError, ChatMessage, HttpBackend};

// ============================================================================
// Minimal canned-response HTTP server
// ============================================================================

struct TestServer {
    endpoint: String,
    /// Raw request text (headers + body), one entry per request served.
    requests: Arc<Mutex<Vec<String>>>,
    handle: JoinHandle<()>,
}

impl TestServer {
    /// Serve exactly one canned `(status, body)` per incoming request, in
    /// order, then shut down.
    fn start(responses: &[(u16, &str)]) -> TestServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        let responses: Vec<(u16, String)> =
            responses.iter().map(|(s, b)| (*s, b.to_string())).collect();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let raw = read_request(&mut stream);
                seen.lock().unwrap().push(raw);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\n\
                     content-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
                stream.flush().unwrap();
            }
        });
        TestServer { endpoint, requests, handle }
    }

    fn finish(self) -> Vec<String> {
        self.handle.join().unwrap();
        Arc::try_unwrap(self.requests).unwrap().into_inner().unwrap()
    }
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        let n = stream.read(&mut chunk).unwrap();
        if n == 0 {
            return String::from_utf8_lossy(&buf).into_owned();
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).into_owned();
    let content_length: usize = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length").then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).unwrap();
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    String::from_utf8_lossy(&buf).into_owned()
}

fn config(endpoint: &str, max_retries: u32) -> BackendConfig {
    BackendConfig {
        endpoint: endpoint.to_string(),
        model: "test-model".into(),
        temperature: 0.0,
        max_tokens: None,
        timeout_s: 5.0,
        max_retries,
        api_key_env: None,
    }
}

fn ok_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3},
    })
    .to_string()
}

fn messages() -> Vec<ChatMessage> {
    vec![ChatMessage::system("You are a test."), ChatMessage::user("Say hi.")]
}

// ============================================================================
// Tests
// ============================================================================

#[test]
fn happy_path_sends_chat_request_and_parses_reply() {
    let server = TestServer::start(&[(200, &ok_body("  hello world \n"))]);
    let backend = HttpBackend::new(config(&server.endpoint, 2)).unwrap();

    let output = backend.complete(&messages()).unwrap();
    // Only trailing whitespace is trimmed.
    assert_eq!(output.text, "  hello world");
    let usage = output.usage.unwrap();
    assert_eq!(usage.prompt_tokens, 12);
    assert_eq!(usage.completion_tokens, 3);
    assert_eq!(backend.label(), "test-model");

    let requests = server.finish();
    assert_eq!(requests.len(), 1);
    let body = &requests[0][requests[0].find("\r\n\r\n").unwrap() + 4..];
    let sent: serde_json::Value = serde_json::from_str(body).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["role"], "system");
    assert_eq!(sent["messages"][1]["content"], "Say hi.");
    assert!(sent.get("max_tokens").is_none());
    // No api_key_env configured, so no auth header goes out.
    assert!(!requests[0].to_ascii_lowercase().contains("authorization"));
}

#[test]
fn server_errors_and_rate_limits_are_retried() {
    let server = TestServer::start(&[
        (500, "{\"error\": \"boom\"}"),
        (429, "{\"error\": \"slow down\"}"),
        (200, &ok_body("ok")),
    ]);
    let backend = HttpBackend::new(config(&server.endpoint, 2)).unwrap();

    let output = backend.complete(&messages()).unwrap();
    assert_eq!(output.text, "ok");
    assert_eq!(server.finish().len(), 3);
}

#[test]
fn client_errors_fail_immediately_without_retry() {
    let server = TestServer::start(&[(400, "{\"error\": \"bad request\"}")]);
    let backend = HttpBackend::new(config(&server.endpoint, 3)).unwrap();

    let err = backend.complete(&messages()).unwrap_err();
    match err {
        BackendError::Http { status, body } => {
            assert_eq!(status, 400);
            assert!(body.contains("bad request"));
        }
        other => panic!("expected Http error, got {other:?}"),
    }
    assert_eq!(server.finish().len(), 1);
}

#[test]
fn transport_gives_up_after_the_retry_budget() {
    let server = TestServer::start(&[(500, "{}"), (500, "{}")]);
    let backend = HttpBackend::new(config(&server.endpoint, 1)).unwrap();

    let err = backend.complete(&messages()).unwrap_err();
    match err {
        BackendError::Transport { attempts, message } => {
            assert_eq!(attempts, 2);
            assert!(message.contains("500"), "{message}");
        }
        other => panic!("expected Transport error, got {other:?}"),
    }
    assert_eq!(server.finish().len(), 2);
}

#[test]
fn bearer_token_from_the_environment_is_sent() {
    let var = "ASKBENCH_TEST_BEARER_TOKEN";
    std::env::set_var(var, "sk-test-123");
    let server = TestServer::start(&[(200, &ok_body("ok"))]);
    let mut cfg = config(&server.endpoint, 0);
    cfg.api_key_env = Some(var.to_string());
    let backend = HttpBackend::new(cfg).unwrap();

    backend.complete(&messages()).unwrap();
    let requests = server.finish();
    assert!(
        requests[0].to_ascii_lowercase().contains("authorization: bearer sk-test-123"),
        "{}",
        requests[0]
    );
}

#[test]
fn missing_api_key_variable_is_rejected_at_construction() {
    let var = "ASKBENCH_TEST_UNSET_KEY_VARIABLE";
    std::env::remove_var(var);
    let mut cfg = config("http://127.0.0.1:1/v1", 0);
    cfg.api_key_env = Some(var.to_string());
    match HttpBackend::new(cfg) {
        Err(BackendError::MissingApiKey { var: v }) => assert_eq!(v, var),
        Err(other) => panic!("expected MissingApiKey, got {other:?}"),
        Ok(_) => panic!("expected MissingApiKey, got a backend"),
    }
}

#[test]
fn malformed_and_empty_responses_are_reported() {
    let server = TestServer::start(&[(200, "{\"nope\": true}")]);
    let backend = HttpBackend::new(config(&server.endpoint, 0)).unwrap();
    let err = backend.complete(&messages()).unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err:?}");
    server.finish();

    let server = TestServer::start(&[(200, "{\"choices\": []}")]);
    let backend = HttpBackend::new(config(&server.endpoint, 0)).unwrap();
    let err = backend.complete(&messages()).unwrap_err();
    match err {
        BackendError::MalformedResponse(msg) => assert!(msg.contains("no choices"), "{msg}"),
        other => panic!("expected MalformedResponse, got {other:?}"),
    }
    server.finish();
}

#[test]
fn invalid_conversations_are_rejected_before_any_request() {
    // Port 1 is never listening; an attempted request would error differently.
    let backend = HttpBackend::new(config("http://127.0.0.1:1/v1", 0)).unwrap();

    let err = backend.complete(&[]).unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)), "{err:?}");

    let err = backend.complete(&[ChatMessage::assistant("hi")]).unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)), "{err:?}");
}

#[test]
fn config_bounds_are_enforced() {
    let mut cfg = config("http://127.0.0.1:1/v1", 0);
    cfg.temperature = 3.0;
    assert!(matches!(HttpBackend::new(cfg), Err(BackendError::InvalidConfig(_))));

    let mut cfg = config("http://127.0.0.1:1/v1", 0);
    cfg.timeout_s = 0.0;
    assert!(matches!(HttpBackend::new(cfg), Err(BackendError::InvalidConfig(_))));
}
