//! Chat-completion client: POSTs `{model, temperature, max_tokens,
//! messages}` and reads `choices[0].message.content`.

use std::time::{Duration, Instant};

use serde_json::json;

use super::provider::{Completion, CompletionRequest, Provider, ProviderConfig, ProviderError};

/// Environment variable holding the bearer token, if any.
pub const API_KEY_ENV: &str = "COPS_LLM_API_KEY";
/// Environment variable that overrides the configured endpoint.
pub const ENDPOINT_ENV: &str = "COPS_LLM_ENDPOINT";

pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.is_empty())
            .unwrap_or_else(|| config.endpoint.clone());
        if endpoint.is_empty() {
            return Err(ProviderError::Misconfigured(format!(
                "no endpoint configured (set provider.endpoint or {ENDPOINT_ENV})"
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model: config.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

pub(crate) fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
            ProviderError::Transient(format!("HTTP {code}"))
        }
        ureq::Error::StatusCode(code) => ProviderError::Failed(format!("HTTP {code}")),
        ureq::Error::Timeout(t) => ProviderError::Transient(format!("timeout: {t}")),
        ureq::Error::Io(e) => ProviderError::Transient(format!("i/o: {e}")),
        ureq::Error::ConnectionFailed => ProviderError::Transient("connection failed".into()),
        other => ProviderError::Failed(other.to_string()),
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, ProviderError> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let started = Instant::now();
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(classify)?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Failed(format!("unreadable reply: {e}")))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ProviderError::Failed("reply lacks choices[0].message.content".into()))?;
        Ok(Completion {
            text: text.to_string(),
            latency: started.elapsed().as_secs_f64(),
        })
    }
}
