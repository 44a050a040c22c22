use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ClientError;

pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    pub max_tokens: u32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::greedy()
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { mode: DecodeMode::Greedy, temperature: 0.0, top_p: 1.0, n: 1, max_tokens: DEFAULT_MAX_TOKENS }
    }

    /// Sampling setup used for pass@k: 20 candidates at temperature 0.2,
    /// nucleus 0.95.
    pub fn sampled() -> Self {
        Self { mode: DecodeMode::Sampled, temperature: 0.2, top_p: 0.95, n: 20, max_tokens: DEFAULT_MAX_TOKENS }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |why: &str| Err(ClientError::InvalidConfig(why.into()));
        if self.mode == DecodeMode::Greedy && self.n != 1 {
            return bad("greedy decoding takes exactly one candidate");
        }
        if self.n == 0 || self.max_tokens == 0 {
            return bad("n and max_tokens must be positive");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be finite and non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        Ok(())
    }

    /// Temperature actually sent; greedy always sends 0.
    pub fn effective_temperature(&self) -> f64 {
        match self.mode {
            DecodeMode::Greedy => 0.0,
            DecodeMode::Sampled => self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Upper bound of the wait before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the chat-completion route.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; none sends no
    /// Authorization header.
    pub api_key_env: Option<String>,
    /// In-flight request limit for batch generation.
    pub concurrency: usize,
    pub request_timeout_secs: u64,
    pub retry: RetryPolicy,
    /// JSON-lines file receiving every request/response exchange.
    pub archive: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: String::new(),
            api_key_env: None,
            concurrency: 4,
            request_timeout_secs: 300,
            retry: RetryPolicy::default(),
            archive: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(ClientError::InvalidConfig(format!("endpoint url must be http(s): {:?}", self.url)));
        }
        if self.model.is_empty() {
            return Err(ClientError::InvalidConfig("endpoint model is empty".into()));
        }
        if self.concurrency == 0 || self.request_timeout_secs == 0 {
            return Err(ClientError::InvalidConfig("concurrency and request timeout must be positive".into()));
        }
        Ok(())
    }
}
