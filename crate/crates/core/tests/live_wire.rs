//! The live backend against a local scripted HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use revprompt::gateway::{
    CompletionBackend, CompletionRequest, Embedder, GenerationParams, LiveBackend, RetryPolicy,
};
use revprompt::Error;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` reply per connection and records
/// each request.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut length = 0;
            let mut auth = None;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen)
}

fn chat(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        base_delay: Duration::from_millis(5),
    }
}

fn request<'a>(
    prompt: &'a str,
    params: &'a GenerationParams,
    sample_index: u32,
) -> CompletionRequest<'a> {
    CompletionRequest {
        prompt,
        params,
        sample_index,
    }
}

#[test]
fn chat_request_wire_format() {
    let (base, seen) = serve(vec![(200, chat("hello there"))]);
    let backend = LiveBackend::new(format!("{base}/v1/"), Some("sk-test".into()));
    let params = GenerationParams {
        seed: Some(40),
        temperature: 0.7,
        max_tokens: 64,
        ..GenerationParams::default()
    };
    let out = backend.complete(&request("Say hi", &params, 2)).unwrap();
    assert_eq!(out, "hello there");
    let seen = seen.lock().unwrap();
    let req = &seen[0];
    assert_eq!(req.path, "/v1/chat/completions");
    assert_eq!(req.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(req.body["model"], "gpt-3.5-turbo");
    assert_eq!(
        req.body["messages"],
        json!([{"role": "user", "content": "Say hi"}])
    );
    assert_eq!(req.body["temperature"], 0.7);
    assert_eq!(req.body["max_tokens"], 64);
    assert_eq!(req.body["n"], 1);
    assert_eq!(req.body["seed"], 42);
}

#[test]
fn unseeded_request_has_no_seed_or_auth() {
    let (base, seen) = serve(vec![(200, chat("x"))]);
    let backend = LiveBackend::new(base, None);
    backend
        .complete(&request("p", &GenerationParams::default(), 0))
        .unwrap();
    let seen = seen.lock().unwrap();
    assert!(seen[0].body.get("seed").is_none());
    assert!(seen[0].auth.is_none());
}

#[test]
fn server_errors_are_retried() {
    let (base, seen) = serve(vec![
        (503, "busy".into()),
        (500, "oops".into()),
        (200, chat("finally")),
    ]);
    let backend = LiveBackend::new(base, None).with_retry(fast_retry());
    let out = backend
        .complete(&request("p", &GenerationParams::default(), 0))
        .unwrap();
    assert_eq!(out, "finally");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_mean_unavailable() {
    let (base, _) = serve(vec![
        (502, "a".into()),
        (502, "b".into()),
        (502, "c".into()),
    ]);
    let backend = LiveBackend::new(base, None).with_retry(fast_retry());
    let err = backend
        .complete(&request("p", &GenerationParams::default(), 0))
        .unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err:?}");
    assert!(err.is_backend());
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen) = serve(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let backend = LiveBackend::new(base, None).with_retry(fast_retry());
    match backend.complete(&request("p", &GenerationParams::default(), 0)) {
        Err(Error::Remote { status, body }) => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_an_error() {
    let (base, _) = serve(vec![(200, "{\"choices\": []}".into())]);
    let backend = LiveBackend::new(base, None);
    assert!(backend
        .complete(&request("p", &GenerationParams::default(), 0))
        .is_err());
}

#[test]
fn unreachable_server_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let backend =
        LiveBackend::new(format!("http://127.0.0.1:{port}"), None).with_retry(RetryPolicy {
            attempts: 2,
            base_delay: Duration::from_millis(1),
        });
    let err = backend
        .complete(&request("p", &GenerationParams::default(), 0))
        .unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err:?}");
}

#[test]
fn embedding_wire_format() {
    let reply = json!({"data": [{"embedding": [0.5, -0.5, 1.0]}]}).to_string();
    let (base, seen) = serve(vec![(200, reply)]);
    let backend = LiveBackend::new(base, Some("k".into()));
    let v = backend
        .embed("some text", "text-embedding-3-large")
        .unwrap();
    assert_eq!(v.values(), &[0.5, -0.5, 1.0]);
    assert_eq!(v.model_id(), "text-embedding-3-large");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/embeddings");
    assert_eq!(
        seen[0].body,
        json!({"model": "text-embedding-3-large", "input": "some text"})
    );
}
