//! The HTTP backend against a local mock chat-completion server.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use bsc_core::gateway::{
    AdapterConfig, BackendError, CompletionRequest, Gateway, GatewayError, HttpBackend, RequestTag, RetryPolicy,
    TaskKind,
};
use serde_json::{json, Value};

#[derive(Clone)]
struct Mock {
    /// Statuses to return before succeeding; 200 afterwards.
    script: Arc<Vec<u16>>,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<(Option<String>, Value)>>>,
}

async fn handler(State(mock): State<Mock>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = mock.hits.fetch_add(1, Ordering::SeqCst);
    let auth = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_string());
    mock.seen.lock().unwrap().push((auth, body));
    match mock.script.get(n).copied() {
        Some(429) => (StatusCode::TOO_MANY_REQUESTS, [("retry-after", "0")], "slow down").into_response(),
        Some(code) => (StatusCode::from_u16(code).unwrap(), "nope").into_response(),
        None => Json(json!({"choices": [{"message": {"role": "assistant", "content": "{\"1\": 3}"}}]})).into_response(),
    }
}

async fn serve(script: Vec<u16>) -> (String, Mock) {
    let mock = Mock {
        script: Arc::new(script),
        hits: Arc::new(AtomicUsize::new(0)),
        seen: Arc::new(Mutex::new(Vec::new())),
    };
    let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(mock.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1/chat/completions"), mock)
}

fn adapter(endpoint: String, key_env: Option<&str>) -> AdapterConfig {
    AdapterConfig {
        endpoint,
        model: "mock-model".into(),
        api_key_env: key_env.map(str::to_string),
        auth_header: "Authorization".into(),
        auth_prefix: "Bearer ".into(),
        response_pointer: "/choices/0/message/content".into(),
        extra_headers: BTreeMap::new(),
        timeout_secs: 5,
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        prompt: "score this".into(),
        temperature: 1.0,
        max_output_tokens: 64,
        tag: RequestTag {
            query_id: "q1".into(),
            round: 1,
            batch_index: 0,
        },
        task: TaskKind::Pointwise,
        passage_ids: vec!["d1".into()],
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        base_delay_ms: 1,
        max_delay_ms: 5,
    }
}

#[tokio::test]
async fn throttled_twice_then_success() {
    let (url, mock) = serve(vec![429, 429]).await;
    std::env::set_var("BSC_MOCK_KEY", "secret");
    let backend = Arc::new(HttpBackend::new("mock", adapter(url, Some("BSC_MOCK_KEY"))).unwrap());
    let gateway = Gateway::new(backend, 2, fast_retry());
    let result = gateway.complete(&request()).await.unwrap();
    assert_eq!(result.text, "{\"1\": 3}");
    assert_eq!(result.attempts, 3);
    assert_eq!(result.backend, "live:mock");
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);

    let seen = mock.seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer secret"));
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["content"], "score this");
    assert_eq!(body["max_tokens"], 64);
}

#[tokio::test]
async fn unauthorized_fails_without_retry() {
    let (url, mock) = serve(vec![401]).await;
    let backend = Arc::new(HttpBackend::new("mock", adapter(url, None)).unwrap());
    let gateway = Gateway::new(backend, 2, fast_retry());
    match gateway.complete(&request()).await {
        Err(GatewayError::Failed {
            source: BackendError::Fatal(_),
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
    assert_eq!(gateway.stats().failures, 1);
}

#[tokio::test]
async fn server_errors_exhaust_the_budget() {
    let (url, mock) = serve(vec![503; 10]).await;
    let backend = Arc::new(HttpBackend::new("mock", adapter(url, None)).unwrap());
    let gateway = Gateway::new(backend, 1, RetryPolicy {
        max_attempts: 3,
        ..fast_retry()
    });
    assert!(matches!(
        gateway.complete(&request()).await,
        Err(GatewayError::Exhausted { attempts: 3, .. })
    ));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn missing_reply_field_is_fatal() {
    let (url, _mock) = serve(vec![]).await;
    let mut config = adapter(url, None);
    config.response_pointer = "/content/0/text".into();
    let backend = Arc::new(HttpBackend::new("mock", config).unwrap());
    let gateway = Gateway::new(backend, 1, fast_retry());
    assert!(matches!(gateway.complete(&request()).await, Err(GatewayError::Failed { .. })));
}
