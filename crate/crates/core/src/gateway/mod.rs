//! Execution of LLM calls against pluggable backends.
//!
//! [`Gateway`] bounds the number of in-flight requests with a fair (FIFO)
//! semaphore and retries transient failures with capped exponential backoff.
//! Backends are live HTTP adapters, a replay cache, or the position-bias
//! simulator.

mod http;
mod replay;
mod simulator;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::rng::StreamKey;

pub use http::{AdapterConfig, HttpBackend};
pub use replay::{prompt_digest, RecordingBackend, ReplayBackend, ReplayCache, ReplayRecord};
pub use simulator::{simulate_listwise, simulate_scores, BiasModel, SimulatedBackend, SimulationError};

/// Correlates a response with the call that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestTag {
    pub query_id: String,
    pub round: u32,
    pub batch_index: u32,
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/r{}/b{}", self.query_id, self.round, self.batch_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Pointwise,
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: RequestTag,
    pub task: TaskKind,
    /// Passage ids in prompt order. Never sent to live backends; the
    /// simulator reads gold grades through them.
    pub passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub backend: String,
    pub tag: RequestTag,
}

/// Failure of a single backend attempt.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("throttled")]
    Throttled { retry_after: Option<Duration> },
    #[error("{0}")]
    Fatal(String),
    #[error("no recorded response for {0}")]
    CacheMiss(RequestTag),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::Throttled { .. })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("{tag}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        tag: RequestTag,
        attempts: u32,
        last: BackendError,
    },
    #[error("{tag}: {source}")]
    Failed { tag: RequestTag, source: BackendError },
    #[error("{tag}: invalid request: {reason}")]
    InvalidRequest { tag: RequestTag, reason: String },
}

impl GatewayError {
    pub fn tag(&self) -> &RequestTag {
        match self {
            GatewayError::Exhausted { tag, .. }
            | GatewayError::Failed { tag, .. }
            | GatewayError::InvalidRequest { tag, .. } => tag,
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> String;

    /// One attempt; retries are the gateway's job.
    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1`: exponential with jitter in
    /// `[d/2, d]`. The jitter is keyed on the tag so retries of different
    /// calls spread out while staying reproducible.
    pub fn delay(&self, tag: &RequestTag, attempt: u32) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20))
            .min(self.max_delay_ms);
        let mut rng = StreamKey::new("jitter", 0)
            .with_str(&tag.query_id)
            .with_u64(u64::from(tag.round))
            .with_u64(u64::from(tag.batch_index))
            .with_u64(u64::from(attempt))
            .stream();
        let half = exp / 2;
        Duration::from_millis(half + (rng.unit_f64() * (exp - half) as f64) as u64)
    }
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub requests: u64,
    pub attempts: u64,
    pub failures: u64,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    permits: Arc<Semaphore>,
    retry: RetryPolicy,
    counters: Counters,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, concurrency: usize, retry: RetryPolicy) -> Self {
        Self {
            backend,
            permits: Arc::new(Semaphore::new(concurrency.max(1))),
            retry,
            counters: Counters::default(),
        }
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            attempts: self.counters.attempts.load(Ordering::Relaxed),
            failures: self.counters.failures.load(Ordering::Relaxed),
        }
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let tag = request.tag.clone();
        if request.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest {
                tag,
                reason: "empty prompt".into(),
            });
        }
        if request.temperature.is_nan() || request.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest {
                tag,
                reason: format!("temperature {} is negative", request.temperature),
            });
        }
        self.counters.requests.fetch_add(1, Ordering::Relaxed);

        let started = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.counters.attempts.fetch_add(1, Ordering::Relaxed);
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore is never closed");
                self.backend.send(request).await
            };
            match outcome {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts: attempt,
                        backend: self.backend.id(),
                        tag,
                    })
                }
                Err(err) if err.is_retryable() && attempt < self.retry.max_attempts => {
                    let mut wait = self.retry.delay(&tag, attempt);
                    if let BackendError::Throttled {
                        retry_after: Some(after),
                    } = &err
                    {
                        wait = wait.max(*after);
                    }
                    log::debug!("{tag}: attempt {attempt} failed ({err}), retrying in {wait:?}");
                    tokio::time::sleep(wait).await;
                }
                Err(err) => {
                    self.counters.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(if err.is_retryable() {
                        GatewayError::Exhausted {
                            tag,
                            attempts: attempt,
                            last: err,
                        }
                    } else {
                        GatewayError::Failed { tag, source: err }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Mutex;

    struct Scripted {
        script: Mutex<Vec<Result<String, BackendError>>>,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Scripted {
        fn new(mut script: Vec<Result<String, BackendError>>) -> Self {
            script.reverse();
            Self {
                script: Mutex::new(script),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            }
        }
    }

    #[async_trait]
    impl Backend for Scripted {
        fn id(&self) -> String {
            "scripted".into()
        }

        async fn send(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(5)).await;
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            self.script
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Ok("default".into()))
        }
    }

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 1.0,
            max_output_tokens: 64,
            tag: RequestTag {
                query_id: "q".into(),
                round: 1,
                batch_index: 0,
            },
            task: TaskKind::Pointwise,
            passage_ids: vec![],
        }
    }

    fn fast_retry(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 1,
            max_delay_ms: 4,
        }
    }

    #[tokio::test]
    async fn retries_throttling_then_succeeds() {
        let backend = Arc::new(Scripted::new(vec![
            Err(BackendError::Throttled { retry_after: None }),
            Err(BackendError::Throttled { retry_after: None }),
            Ok("done".into()),
        ]));
        let gw = Gateway::new(backend, 2, fast_retry(5));
        let result = gw.complete(&request("p")).await.unwrap();
        assert_eq!(result.attempts, 3);
        assert_eq!(result.text, "done");
        assert_eq!(result.tag, request("p").tag);
        assert_eq!(gw.stats().attempts, 3);
    }

    #[tokio::test]
    async fn exhausts_attempt_cap() {
        let backend = Arc::new(Scripted::new(vec![
            Err(BackendError::Transient("503".into())),
            Err(BackendError::Transient("503".into())),
        ]));
        let gw = Gateway::new(backend, 1, fast_retry(2));
        match gw.complete(&request("p")).await {
            Err(GatewayError::Exhausted { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn fatal_errors_fail_fast() {
        let backend = Arc::new(Scripted::new(vec![Err(BackendError::Fatal("401".into()))]));
        let gw = Gateway::new(backend, 1, fast_retry(5));
        assert!(matches!(
            gw.complete(&request("p")).await,
            Err(GatewayError::Failed { .. })
        ));
        assert_eq!(gw.stats().attempts, 1);
    }

    #[tokio::test]
    async fn rejects_empty_prompt() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![])), 1, fast_retry(1));
        assert!(matches!(
            gw.complete(&request("")).await,
            Err(GatewayError::InvalidRequest { .. })
        ));
    }

    #[tokio::test]
    async fn bounds_in_flight_requests() {
        let backend = Arc::new(Scripted::new(vec![]));
        let gw = Arc::new(Gateway::new(backend.clone(), 3, fast_retry(1)));
        let tasks: Vec<_> = (0..20)
            .map(|_| {
                let gw = gw.clone();
                tokio::spawn(async move { gw.complete(&request("p")).await })
            })
            .collect();
        for t in tasks {
            t.await.unwrap().unwrap();
        }
        let peak = backend.peak.load(Ordering::SeqCst);
        assert!((2..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn backoff_grows_and_is_capped() {
        let policy = RetryPolicy {
            max_attempts: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        let tag = request("p").tag;
        let d1 = policy.delay(&tag, 1).as_millis();
        let d3 = policy.delay(&tag, 3).as_millis();
        let d9 = policy.delay(&tag, 9).as_millis();
        assert!((50..=100).contains(&d1));
        assert!((200..=400).contains(&d3));
        assert!((500..=1000).contains(&d9));
        assert_eq!(policy.delay(&tag, 3), policy.delay(&tag, 3));
    }
}
