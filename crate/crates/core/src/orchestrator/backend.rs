//! Language backends: anything that turns (prompt, command) into JSON text.

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::rules::RuleBackend;

pub const ENV_BACKEND: &str = "DRIVESIM_BACKEND";
pub const ENV_ENDPOINT: &str = "DRIVESIM_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "DRIVESIM_LLM_API_KEY";
pub const ENV_MODEL: &str = "DRIVESIM_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4";

/// Attempts per request when the reply is not valid JSON.
pub const JSON_ATTEMPTS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait LanguageBackend: Send + Sync {
    /// Raw model text for one request.
    fn complete(&self, prompt: &str, command: &str) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

/// Strips a surrounding markdown code fence, which chat models like to add.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Requests a JSON object, retrying once when the reply does not parse.
pub fn complete_json(backend: &dyn LanguageBackend, prompt: &str, command: &str) -> Result<Value, BackendError> {
    let mut last = String::new();
    for _ in 0..JSON_ATTEMPTS {
        let text = backend.complete(prompt, command)?;
        match serde_json::from_str::<Value>(strip_fence(&text)) {
            Ok(v @ Value::Object(_)) => return Ok(v),
            Ok(other) => last = format!("expected a JSON object, got {other}"),
            Err(e) => last = e.to_string(),
        }
    }
    Err(BackendError::MalformedResponse(format!("{last} (after {JSON_ATTEMPTS} attempts)")))
}

/// OpenAI-compatible chat-completions client.
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>) -> Self {
        RemoteBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model: DEFAULT_MODEL.into(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| BackendError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let api_key = std::env::var(ENV_API_KEY).unwrap_or_default();
        let mut b = RemoteBackend::new(endpoint, api_key);
        if let Ok(model) = std::env::var(ENV_MODEL) {
            b.model = model;
        }
        Ok(b)
    }

    pub fn request_body(&self, prompt: &str, command: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": prompt},
                {"role": "user", "content": command},
            ],
        })
    }
}

impl LanguageBackend for RemoteBackend {
    fn complete(&self, prompt: &str, command: &str) -> Result<String, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if !self.api_key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {}", self.api_key));
        }
        let mut resp = req.send_json(self.request_body(prompt, command)).map_err(|e| BackendError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| BackendError::Network(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
            _ => return Err(BackendError::Network(format!("HTTP {status}: {body}"))),
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| BackendError::MalformedResponse(format!("envelope: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
    }

    fn name(&self) -> &str {
        "remote"
    }
}

/// `rule` or `remote` (configured from the environment).
pub fn backend_from_name(name: &str) -> Result<Box<dyn LanguageBackend>, BackendError> {
    match name {
        "rule" | "" => Ok(Box::new(RuleBackend::default())),
        "remote" => Ok(Box::new(RemoteBackend::from_env()?)),
        other => Err(BackendError::Config(format!("unknown backend {other:?} (expected rule or remote)"))),
    }
}

/// Backend chosen by `DRIVESIM_BACKEND`, `rule` when unset.
pub fn backend_from_env() -> Result<Box<dyn LanguageBackend>, BackendError> {
    backend_from_name(std::env::var(ENV_BACKEND).as_deref().unwrap_or("rule"))
}
