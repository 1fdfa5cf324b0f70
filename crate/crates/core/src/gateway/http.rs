//! Generic chat-completion client driven by adapter configuration.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::header::{HeaderMap, HeaderName, HeaderValue, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, CompletionRequest};

/// Endpoint, auth and field mapping for one chat-completion service.
///
/// The request body is `{model, messages: [{role: "user", content}],
/// temperature, max_tokens}`, which OpenAI- and Anthropic-style endpoints
/// both accept. The reply text is read at `response_pointer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default = "default_auth_prefix")]
    pub auth_prefix: String,
    #[serde(default = "default_response_pointer")]
    pub response_pointer: String,
    #[serde(default)]
    pub extra_headers: BTreeMap<String, String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_auth_prefix() -> String {
    "Bearer ".into()
}

fn default_response_pointer() -> String {
    "/choices/0/message/content".into()
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpBackend {
    name: String,
    config: AdapterConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    /// Fails fast when the configured key variable is unset or a header is
    /// malformed.
    pub fn new(name: &str, config: AdapterConfig) -> Result<Self, BackendError> {
        let mut headers = HeaderMap::new();
        if let Some(var) = &config.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| BackendError::Fatal(format!("environment variable {var} is not set")))?;
            headers.insert(header_name(&config.auth_header)?, header_value(&format!("{}{}", config.auth_prefix, key))?);
        }
        for (k, v) in &config.extra_headers {
            headers.insert(header_name(k)?, header_value(v)?);
        }
        let client = reqwest::Client::builder()
            .default_headers(headers)
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Fatal(format!("http client: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            config,
            client,
        })
    }
}

fn header_name(name: &str) -> Result<HeaderName, BackendError> {
    HeaderName::from_bytes(name.as_bytes()).map_err(|e| BackendError::Fatal(format!("header {name:?}: {e}")))
}

fn header_value(value: &str) -> Result<HeaderValue, BackendError> {
    HeaderValue::from_str(value).map_err(|e| BackendError::Fatal(format!("header value: {e}")))
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    let secs: f64 = headers.get(RETRY_AFTER)?.to_str().ok()?.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

/// Maps a non-success status onto the retry contract.
fn classify(status: StatusCode, headers: &HeaderMap, body: &str) -> BackendError {
    let snippet: String = body.chars().take(200).collect();
    match status {
        StatusCode::TOO_MANY_REQUESTS => BackendError::Throttled {
            retry_after: retry_after(headers),
        },
        StatusCode::REQUEST_TIMEOUT => BackendError::Transient(format!("{status}")),
        s if s.is_server_error() => BackendError::Transient(format!("{status}: {snippet}")),
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
            BackendError::Fatal(format!("authentication failed ({status})"))
        }
        s => BackendError::Fatal(format!("{s}: {snippet}")),
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("live:{}", self.name)
    }

    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let response = self
            .client
            .post(&self.config.endpoint)
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_builder() {
                    BackendError::Fatal(e.to_string())
                } else {
                    BackendError::Transient(e.to_string())
                }
            })?;
        let status = response.status();
        let headers = response.headers().clone();
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        if !status.is_success() {
            return Err(classify(status, &headers, &text));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Transient(format!("malformed JSON reply: {e}")))?;
        value
            .pointer(&self.config.response_pointer)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal(format!("reply has no text at {}", self.config.response_pointer)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        let h = HeaderMap::new();
        assert!(matches!(
            classify(StatusCode::TOO_MANY_REQUESTS, &h, ""),
            BackendError::Throttled { retry_after: None }
        ));
        assert!(matches!(classify(StatusCode::BAD_GATEWAY, &h, ""), BackendError::Transient(_)));
        assert!(matches!(classify(StatusCode::UNAUTHORIZED, &h, ""), BackendError::Fatal(_)));
        assert!(matches!(classify(StatusCode::BAD_REQUEST, &h, ""), BackendError::Fatal(_)));

        let mut h = HeaderMap::new();
        h.insert(RETRY_AFTER, HeaderValue::from_static("2"));
        assert_eq!(
            classify(StatusCode::TOO_MANY_REQUESTS, &h, ""),
            BackendError::Throttled {
                retry_after: Some(Duration::from_secs(2))
            }
        );
    }

    #[test]
    fn missing_key_fails_fast() {
        let config = AdapterConfig {
            endpoint: "http://localhost:1/v1".into(),
            model: "m".into(),
            api_key_env: Some("BSC_TEST_KEY_THAT_IS_NOT_SET".into()),
            auth_header: default_auth_header(),
            auth_prefix: default_auth_prefix(),
            response_pointer: default_response_pointer(),
            extra_headers: BTreeMap::new(),
            timeout_secs: 1,
        };
        assert!(matches!(HttpBackend::new("x", config), Err(BackendError::Fatal(_))));
    }
}
