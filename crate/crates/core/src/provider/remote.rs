use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GenerationRequest, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Completion endpoint, e.g. `http://localhost:8000/v1/completions`.
    pub endpoint: String,
    pub model: String,
    /// Sent as a bearer token when set.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// HTTP completion provider.
///
/// Request body: `{"model", "prompt", "temperature", "max_tokens"}`. The
/// completion is read from `text`, `completion`, `choices[0].text` or
/// `choices[0].message.content`, whichever is present first.
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
    calls: AtomicU64,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        if config.endpoint.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "remote endpoint is not configured".into(),
            ));
        }
        if config.max_attempts == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_attempts must be at least 1".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteProvider {
            config,
            agent,
            calls: AtomicU64::new(0),
        })
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<String, Attempt> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": self.config.model,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(ProviderError::Status { status, body: text }));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(ProviderError::MalformedResponse(e.to_string())))?;
        completion_text(&value).map(str::to_string).ok_or_else(|| {
            Attempt::Fatal(ProviderError::MalformedResponse(format!(
                "no completion text field in {value}"
            )))
        })
    }
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

fn completion_text(v: &Value) -> Option<&str> {
    v.get("text")
        .and_then(Value::as_str)
        .or_else(|| v.get("completion").and_then(Value::as_str))
        .or_else(|| {
            let choice = v.get("choices")?.get(0)?;
            choice
                .get("text")
                .and_then(Value::as_str)
                .or_else(|| choice.get("message")?.get("content")?.as_str())
        })
}

impl Provider for RemoteProvider {
    fn id(&self) -> &str {
        "remote"
    }

    fn model(&self) -> &str {
        &self.config.model
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                let delay = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 2).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(req) {
                Ok(text) if text.trim().is_empty() => return Err(ProviderError::EmptyCompletion),
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!(
                        "provider attempt {attempt}/{} failed: {msg}",
                        self.config.max_attempts
                    );
                    last = msg;
                }
            }
        }
        Err(ProviderError::Transport {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::RequestTag;

    #[test]
    fn parses_known_response_shapes() {
        assert_eq!(completion_text(&json!({"text": "a"})), Some("a"));
        assert_eq!(completion_text(&json!({"completion": "b"})), Some("b"));
        assert_eq!(
            completion_text(&json!({"choices": [{"text": "c"}]})),
            Some("c")
        );
        assert_eq!(
            completion_text(
                &json!({"choices": [{"message": {"role": "assistant", "content": "d"}}]})
            ),
            Some("d")
        );
        assert_eq!(completion_text(&json!({"other": 1})), None);
    }

    #[test]
    fn refused_connection_fails_after_bounded_retries() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let p = RemoteProvider::new(RemoteConfig {
            endpoint: format!("http://{addr}/v1/completions"),
            model: "m".into(),
            backoff_ms: 1,
            timeout_secs: 5,
            ..RemoteConfig::default()
        })
        .unwrap();
        let err = p
            .generate(&GenerationRequest::new("hi", RequestTag::Evaluate))
            .unwrap_err();
        assert!(
            matches!(err, ProviderError::Transport { attempts: 3, .. }),
            "{err:?}"
        );
        assert_eq!(p.network_calls(), 3);
    }

    #[test]
    fn unconfigured_endpoint_is_rejected() {
        assert!(RemoteProvider::new(RemoteConfig::default()).is_err());
    }
}
