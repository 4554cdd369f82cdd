//! The live provider against a local chat-completions stub.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use tutorflow::providers::{
    CompletionProvider, CompletionRequest, LiveConfig, LiveModerator, LiveProvider, Moderator,
    ProviderError, ReasoningEffort,
};

const GOOD_KEY: &str = "stub-key";

#[derive(Default)]
struct Stub {
    hits: AtomicUsize,
    flaky_failures_left: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
}

async fn chat(
    State(stub): State<Arc<Stub>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    stub.hits.fetch_add(1, Ordering::SeqCst);
    stub.bodies.lock().unwrap().push(body.clone());
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok());
    if auth != Some(&format!("Bearer {GOOD_KEY}")) {
        return (
            StatusCode::UNAUTHORIZED,
            Json(json!({"error": {"message": "Incorrect API key provided"}})),
        );
    }
    match body["model"].as_str().unwrap_or("") {
        "always-down" => {
            return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": {"message": "boom"}})));
        }
        "flaky" => {
            let left = stub.flaky_failures_left.load(Ordering::SeqCst);
            if left > 0 {
                stub.flaky_failures_left.store(left - 1, Ordering::SeqCst);
                return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": {"message": "busy"}})));
            }
        }
        "bad-request" => {
            return (StatusCode::BAD_REQUEST, Json(json!({"error": {"message": "unsupported parameter"}})));
        }
        "refuser" => {
            return (
                StatusCode::OK,
                Json(json!({"choices": [{"message": {"content": null, "refusal": "I can't help with that."}}]})),
            );
        }
        _ => {}
    }
    let last = body["messages"].as_array().and_then(|m| m.last()).cloned().unwrap_or(Value::Null);
    (
        StatusCode::OK,
        Json(json!({
            "model": body["model"],
            "choices": [{"message": {"role": "assistant", "content": format!("echo: {}", last["content"].as_str().unwrap_or(""))}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7}
        })),
    )
}

async fn moderations(Json(body): Json<Value>) -> Json<Value> {
    let flagged = body["input"].as_str().unwrap_or("").contains("forbidden");
    Json(json!({"results": [{"flagged": flagged, "categories": {"harassment": flagged, "violence": false}}]}))
}

/// Serve the stub on an ephemeral port from a background runtime.
fn spawn_stub() -> (String, Arc<Stub>) {
    let stub = Arc::new(Stub::default());
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/moderations", post(moderations))
        .with_state(stub.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}/v1"), stub)
}

fn config(base: &str, key: &str) -> LiveConfig {
    let mut config = LiveConfig::new(base, key);
    config.initial_backoff = Duration::from_millis(1);
    config.timeout = Duration::from_secs(10);
    config
}

#[test]
fn invalid_key_is_an_authentication_error_without_retry() {
    let (base, stub) = spawn_stub();
    let provider = LiveProvider::new(config(&base, "wrong")).unwrap();
    let err = provider.complete(&CompletionRequest::new("gpt-4o", "hi")).unwrap_err();
    assert!(matches!(err, ProviderError::Authentication(ref m) if m.contains("Incorrect API key")), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_until_success() {
    let (base, stub) = spawn_stub();
    stub.flaky_failures_left.store(2, Ordering::SeqCst);
    let provider = LiveProvider::new(config(&base, GOOD_KEY)).unwrap();
    let response = provider.complete(&CompletionRequest::new("flaky", "hello")).unwrap();
    assert_eq!(response.text, "echo: hello");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_server_errors_give_up_after_max_attempts() {
    let (base, stub) = spawn_stub();
    let mut cfg = config(&base, GOOD_KEY);
    cfg.max_attempts = 3;
    let provider = LiveProvider::new(cfg).unwrap();
    let err = provider.complete(&CompletionRequest::new("always-down", "x")).unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 3, .. }), "{err}");
    assert!(err.is_transient());
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, stub) = spawn_stub();
    let provider = LiveProvider::new(config(&base, GOOD_KEY)).unwrap();
    let err = provider.complete(&CompletionRequest::new("bad-request", "x")).unwrap_err();
    assert!(matches!(err, ProviderError::Rejected { status: 400, .. }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn refusals_surface_as_refusal_errors() {
    let (base, _stub) = spawn_stub();
    let provider = LiveProvider::new(config(&base, GOOD_KEY)).unwrap();
    let err = provider.complete(&CompletionRequest::new("refuser", "x")).unwrap_err();
    assert!(matches!(err, ProviderError::Refusal(_)), "{err}");
}

#[test]
fn wire_format_and_usage() {
    let (base, stub) = spawn_stub();
    let provider = LiveProvider::new(config(&base, GOOD_KEY)).unwrap();
    let mut request = CompletionRequest::new("gpt-5", "the question")
        .with_system("house rules")
        .with_step("llm_feedback");
    request.temperature = Some(0.0);
    request.reasoning_effort = Some(ReasoningEffort::High);
    let response = provider.complete(&request).unwrap();
    assert_eq!(response.text, "echo: the question");
    assert_eq!((response.prompt_tokens, response.completion_tokens), (11, 7));
    assert_eq!(response.model_echo, "gpt-5");

    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "gpt-5");
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "house rules"}));
    assert_eq!(body["messages"][1], json!({"role": "user", "content": "the question"}));
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["reasoning_effort"], "high");
    assert!(body.get("step").is_none());
}

#[test]
fn moderation_endpoint() {
    let (base, _stub) = spawn_stub();
    let moderator = LiveModerator::new(config(&base, GOOD_KEY)).unwrap();
    assert!(!moderator.moderate("a proof by induction").unwrap().flagged);
    let verdict = moderator.moderate("something forbidden").unwrap();
    assert!(verdict.flagged);
    assert_eq!(verdict.categories, ["harassment"]);
}

#[test]
fn unreachable_endpoint_is_transient() {
    let mut cfg = config("http://127.0.0.1:9/v1", GOOD_KEY);
    cfg.max_attempts = 2;
    let provider = LiveProvider::new(cfg).unwrap();
    let err = provider.complete(&CompletionRequest::new("gpt-4o", "x")).unwrap_err();
    assert!(err.is_transient(), "{err}");
}
