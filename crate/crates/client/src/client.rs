use std::fs::{File, OpenOptions};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{DecodeConfig, EndpointConfig};
use crate::extract::extract_code;
use crate::ClientError;

/// How the prompt is laid out in the request. Recorded in run metadata.
pub const MESSAGE_LAYOUT: &str = "single-user-message";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub extracted_source: Option<String>,
    pub model_id: String,
    pub sample_index: u32,
    /// Wall time of the request that produced it. Not serialized, so that
    /// candidate files are reproducible.
    #[serde(skip)]
    pub latency: Duration,
}

#[derive(Serialize)]
struct ArchiveEntry<'a> {
    request_sha256: String,
    response_sha256: Option<String>,
    attempt: u32,
    status: Option<u16>,
    latency_ms: u128,
    request: &'a Value,
    response: Option<&'a str>,
    error: Option<&'a str>,
}

enum Failure {
    Transport(String),
    Status { status: u16, body: String, retry_after: Option<Duration> },
}

impl Failure {
    fn transient(&self) -> bool {
        match self {
            Failure::Transport(_) => true,
            Failure::Status { status, .. } => matches!(status, 408 | 409 | 429) || *status >= 500,
        }
    }
}

pub struct Client {
    endpoint: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    archive: Option<Mutex<File>>,
}

type Generated = Result<Vec<Candidate>, ClientError>;

impl Client {
    /// Reads the API key from the configured environment variable and opens
    /// the archive for appending.
    pub fn new(endpoint: EndpointConfig) -> Result<Self, ClientError> {
        endpoint.validate()?;
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ClientError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let archive = match &endpoint.archive {
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ClientError::Archive(format!("{}: {e}", path.display())))?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(endpoint.request_timeout_secs)).build();
        Ok(Self { endpoint, agent, api_key, archive })
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    /// Exactly `config.n` candidates for `prompt`, in sample order. Endpoints
    /// that return fewer choices than asked for are queried again for the
    /// remainder.
    pub fn generate(&self, prompt: &str, config: &DecodeConfig) -> Result<Vec<Candidate>, ClientError> {
        config.validate()?;
        let mut out: Vec<Candidate> = Vec::with_capacity(config.n as usize);
        while out.len() < config.n as usize {
            let want = config.n - out.len() as u32;
            let request = json!({
                "model": self.endpoint.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": config.effective_temperature(),
                "top_p": config.top_p,
                "n": want,
                "max_tokens": config.max_tokens,
            });
            let started = Instant::now();
            let response = self.post_with_retry(&request)?;
            let latency = started.elapsed();
            let (model_id, texts) = parse_choices(&response, &self.endpoint.model)?;
            if texts.iter().all(|t| t.trim().is_empty()) {
                return Err(ClientError::EmptyCompletion);
            }
            for text in texts.into_iter().take(want as usize) {
                out.push(Candidate {
                    extracted_source: extract_code(&text),
                    text,
                    model_id: model_id.clone(),
                    sample_index: out.len() as u32,
                    latency,
                });
            }
        }
        Ok(out)
    }

    /// Runs [`Client::generate`] over many prompts with at most
    /// `concurrency` requests in flight. Results keep the input order.
    pub fn generate_batch(&self, prompts: &[&str], config: &DecodeConfig) -> Vec<Result<Vec<Candidate>, ClientError>> {
        let slots: Vec<Mutex<Option<Generated>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.endpoint.concurrency.min(prompts.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(prompt) = prompts.get(i) else { break };
                    let result = self.generate(prompt, config);
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("result slot poisoned").expect("every prompt is processed"))
            .collect()
    }

    fn post_with_retry(&self, request: &Value) -> Result<String, ClientError> {
        let body = serde_json::to_vec(request).expect("request serializes");
        let policy = &self.endpoint.retry;
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            let result = self.post_once(&body);
            let latency = started.elapsed();
            self.archive(request, &body, attempt, &result, latency);
            let failure = match result {
                Ok(text) => return Ok(text),
                Err(f) => f,
            };
            if !failure.transient() || attempt >= policy.max_retries {
                return Err(match failure {
                    Failure::Transport(detail) => ClientError::EndpointUnreachable {
                        url: self.endpoint.url.clone(),
                        attempts: attempt + 1,
                        detail,
                    },
                    Failure::Status { status, body, .. } => ClientError::EndpointRejected { status, body },
                });
            }
            let ceiling = policy.ceiling(attempt);
            let mut wait = ceiling.mul_f64(rand::thread_rng().gen_range(0.5..=1.0));
            if let Failure::Status { retry_after: Some(hint), .. } = failure {
                wait = wait.max(hint.min(Duration::from_millis(policy.max_delay_ms)));
            }
            log::warn!("request attempt {} failed, retrying in {:?}", attempt + 1, wait);
            std::thread::sleep(wait);
            attempt += 1;
        }
    }

    fn post_once(&self, body: &[u8]) -> Result<String, Failure> {
        let mut req = self.agent.post(&self.endpoint.url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_bytes(body) {
            Ok(resp) => resp.into_string().map_err(|e| Failure::Transport(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => {
                let retry_after =
                    resp.header("Retry-After").and_then(|v| v.trim().parse::<u64>().ok()).map(Duration::from_secs);
                Err(Failure::Status { status, body: resp.into_string().unwrap_or_default(), retry_after })
            }
            Err(ureq::Error::Transport(t)) => Err(Failure::Transport(t.to_string())),
        }
    }

    fn archive(&self, request: &Value, body: &[u8], attempt: u32, result: &Result<String, Failure>, latency: Duration) {
        let Some(file) = &self.archive else { return };
        let (status, response, error) = match result {
            Ok(text) => (Some(200), Some(text.as_str()), None),
            Err(Failure::Status { status, body, .. }) => (Some(*status), Some(body.as_str()), None),
            Err(Failure::Transport(detail)) => (None, None, Some(detail.as_str())),
        };
        let entry = ArchiveEntry {
            request_sha256: hex::encode(Sha256::digest(body)),
            response_sha256: response.map(|r| hex::encode(Sha256::digest(r.as_bytes()))),
            attempt,
            status,
            latency_ms: latency.as_millis(),
            request,
            response,
            error,
        };
        let mut line = serde_json::to_string(&entry).expect("archive entry serializes");
        line.push('\n');
        let mut f = file.lock().expect("archive lock poisoned");
        if let Err(e) = f.write_all(line.as_bytes()) {
            log::warn!("cannot append to request archive: {e}");
        }
    }
}

fn parse_choices(body: &str, fallback_model: &str) -> Result<(String, Vec<String>), ClientError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ClientError::MalformedResponse(format!("not JSON: {e}")))?;
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::MalformedResponse("no choices array".into()))?;
    if choices.is_empty() {
        return Err(ClientError::EmptyCompletion);
    }
    let texts = choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .or_else(|| c.get("text"))
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string()
        })
        .collect();
    let model = value.get("model").and_then(Value::as_str).unwrap_or(fallback_model).to_string();
    Ok((model, texts))
}
