use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gardener_core::provider::{
    AgentRole, CompletionRequest, ImageBlob, LanguageModel, LiveProvider, LiveProviderConfig, ProviderError,
};
use serde_json::{json, Value};

/// Serves canned `(status, body)` replies in order and records request bodies.
struct Stub {
    base: String,
    bodies: Arc<Mutex<Vec<(String, Value)>>>,
}

fn stub(replies: Vec<(u16, Value)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&bodies);
    thread::spawn(move || {
        for (status, reply) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = value.trim().to_string(),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push((auth, serde_json::from_slice(&body).unwrap()));
            let text = reply.to_string();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            )
            .unwrap();
        }
    });
    Stub { base, bodies }
}

fn reply(content: &str, finish: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": finish}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5}
    })
}

fn provider(base: &str) -> LiveProvider {
    let mut config = LiveProviderConfig::new(base, "text-model");
    config.api_key = Some("secret".into());
    config.vision_model = Some("vision-model".into());
    config.initial_backoff = Duration::from_millis(1);
    config.timeout = Duration::from_secs(5);
    LiveProvider::new(config)
}

#[test]
fn retries_server_errors_then_returns_the_completion() {
    let stub = stub(vec![(500, json!({})), (200, reply("1. Dig a pond", "stop"))]);
    let request = CompletionRequest::new(AgentRole::BroadPlanner, "plan things", "a pond");
    let response = provider(&stub.base).complete(&request).unwrap();
    assert_eq!(response.text, "1. Dig a pond");
    assert_eq!(response.meta.prompt_tokens, Some(12));
    assert!(!response.meta.truncated);

    let bodies = stub.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 2);
    let (auth, body) = &bodies[1];
    assert_eq!(auth, "Bearer secret");
    assert_eq!(body["model"], "text-model");
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "plan things"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "a pond"}));
}

#[test]
fn images_ride_on_the_last_user_message() {
    let stub = stub(vec![(200, reply("VERDICT: PASS", "stop"))]);
    let images = (0..6).map(|i| ImageBlob { media_type: "image/png".into(), bytes: vec![i; 4] }).collect();
    let request = CompletionRequest::new(AgentRole::VisualEvaluator, "judge", "does it look right?").with_images(images);
    provider(&stub.base).complete(&request).unwrap();

    let bodies = stub.bodies.lock().unwrap();
    let body = &bodies[0].1;
    assert_eq!(body["model"], "vision-model");
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts.len(), 7);
    assert_eq!(parts[0]["text"], "does it look right?");
    assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AAAAAA==");
}

#[test]
fn auth_failures_are_not_retried() {
    let stub = stub(vec![(401, json!({"error": "bad key"})), (200, reply("never", "stop"))]);
    let request = CompletionRequest::new(AgentRole::CodeGenerator, "code", "write it");
    assert!(matches!(provider(&stub.base).complete(&request), Err(ProviderError::Auth(_))));
    assert_eq!(stub.bodies.lock().unwrap().len(), 1);
}

#[test]
fn empty_output_is_a_refusal_and_length_cutoff_is_flagged() {
    let stub = stub(vec![(200, reply("", "content_filter")), (200, reply("partial", "length"))]);
    let p = provider(&stub.base);
    let request = CompletionRequest::new(AgentRole::CodeGenerator, "code", "write it");
    assert!(matches!(p.complete(&request), Err(ProviderError::Refusal(r)) if r == "content_filter"));
    assert!(p.complete(&request).unwrap().meta.truncated);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let stub = stub(vec![(503, json!({})); 4]);
    let request = CompletionRequest::new(AgentRole::CodeGenerator, "code", "write it");
    assert!(matches!(provider(&stub.base).complete(&request), Err(ProviderError::Transport(_))));
    assert_eq!(stub.bodies.lock().unwrap().len(), 4);
}
