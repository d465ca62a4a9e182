//! Optional remote completion service.
//!
//! Wire contract: `POST endpoint` with `{"prompt": ..., "max_tokens": ...}`,
//! answered by `{"text": ...}`. The key, when set, goes in a bearer header.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "SMARTLINE_LLM_ENDPOINT";
pub const KEY_ENV: &str = "SMARTLINE_LLM_KEY";
pub const DEFAULT_MAX_TOKENS: u32 = 100;
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub enabled: bool,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            endpoint: None,
            api_key: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("enabled", &self.enabled)
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("max_tokens", &self.max_tokens)
            .field("timeout_ms", &self.timeout_ms)
            .finish()
    }
}

impl RemoteConfig {
    /// Enabled exactly when the endpoint variable is set and non-empty.
    pub fn from_env() -> Self {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty());
        Self {
            enabled: endpoint.is_some(),
            endpoint,
            api_key: std::env::var(KEY_ENV).ok().filter(|s| !s.is_empty()),
            ..Self::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.enabled && self.endpoint.is_some()
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// One blocking completion request. Must not be called from inside an async
/// runtime thread.
pub fn remote_complete(prompt: &str, config: &RemoteConfig) -> Result<String> {
    let endpoint = match (&config.endpoint, config.enabled) {
        (Some(e), true) => e,
        _ => return Err(Error::Config("remote assistant is disabled".into())),
    };
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms))
        .build()
        .map_err(|e| Error::Config(format!("http client: {e}")))?;
    let mut request = client.post(endpoint).json(&CompletionRequest {
        prompt,
        max_tokens: config.max_tokens,
    });
    if let Some(key) = &config.api_key {
        request = request.bearer_auth(key);
    }
    let response = request
        .send()
        .map_err(|e| Error::Remote(format!("request failed: {}", e.without_url())))?;
    let status = response.status();
    if !status.is_success() {
        return Err(Error::Remote(format!("status {status}")));
    }
    let body: CompletionResponse = response
        .json()
        .map_err(|e| Error::Remote(format!("bad response body: {}", e.without_url())))?;
    Ok(body.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_redacts_key() {
        let config = RemoteConfig {
            api_key: Some("sk-secret".into()),
            ..RemoteConfig::default()
        };
        let shown = format!("{config:?}");
        assert!(!shown.contains("sk-secret"));
        assert!(shown.contains("redacted"));
    }

    #[test]
    fn defaults() {
        let config = RemoteConfig::default();
        assert_eq!(config.max_tokens, 100);
        assert_eq!(config.timeout_ms, 5000);
        assert!(!config.is_active());
        assert!(remote_complete("hi", &config).is_err());
    }
}
