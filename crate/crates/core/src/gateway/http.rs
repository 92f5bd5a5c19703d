use std::time::Duration;

use serde_json::Value;

use super::wire::{build_request, extract_text};
use super::{Provider, ProviderCall, ProviderConfig, ProviderError};

/// Blocking HTTPS transport for the real provider kinds.
#[derive(Debug, Default)]
pub struct HttpProvider;

impl HttpProvider {
    pub fn new() -> Self {
        Self
    }
}

fn api_key(cfg: &ProviderConfig) -> Result<Option<String>, ProviderError> {
    let var = cfg
        .api_key_ref
        .as_deref()
        .or_else(|| cfg.kind.default_key_env());
    match var {
        None => Ok(None),
        Some(var) => match std::env::var(var) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(ProviderError::Auth(format!(
                "environment variable {var} is not set"
            ))),
        },
    }
}

impl Provider for HttpProvider {
    fn complete(&self, cfg: &ProviderConfig, call: &ProviderCall) -> Result<String, ProviderError> {
        let key = api_key(cfg)?;
        send(cfg, call, key.as_deref()).map_err(|e| match key.as_deref() {
            Some(k) => redact(e, k),
            None => e,
        })
    }
}

/// Providers sometimes echo the credential back in error bodies.
fn redact(e: ProviderError, key: &str) -> ProviderError {
    let scrub = |m: String| m.replace(key, "[REDACTED]");
    match e {
        ProviderError::Timeout => ProviderError::Timeout,
        ProviderError::Auth(m) => ProviderError::Auth(scrub(m)),
        ProviderError::Transport(m) => ProviderError::Transport(scrub(m)),
    }
}

fn send(cfg: &ProviderConfig, call: &ProviderCall, key: Option<&str>) -> Result<String, ProviderError> {
    let wire = build_request(cfg, call, key);
    // the blocking client owns a runtime; build it per call so it is never
    // created or dropped on an async worker thread
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| ProviderError::Transport(e.without_url().to_string()))?;
    let mut req = client.post(&wire.url).json(&wire.body);
    for (k, v) in &wire.headers {
        req = req.header(k, v);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout
        } else {
            ProviderError::Transport(e.without_url().to_string())
        }
    })?;
    let status = resp.status();
    let text = resp.text().map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout
        } else {
            ProviderError::Transport(e.without_url().to_string())
        }
    })?;
    if !status.is_success() {
        let snippet: String = text.chars().take(300).collect();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("HTTP {status}: {snippet}")));
        }
        return Err(ProviderError::Transport(format!("HTTP {status}: {snippet}")));
    }
    let body: Value = serde_json::from_str(&text)
        .map_err(|e| ProviderError::Transport(format!("response body is not JSON: {e}")))?;
    extract_text(cfg.kind, &body).map_err(ProviderError::Transport)
}
