use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{truncate_at_stop, Backend, FinishReason, GatewayError, GenerationRequest, RawGeneration};

pub const ENDPOINT_ENV: &str = "ABSA_ENDPOINT";
pub const API_KEY_ENV: &str = "ABSA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Never written to manifests; prefer the `ABSA_API_KEY` variable.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Total attempts per request for transport errors.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Send the generation seed to the server.
    #[serde(default = "default_true")]
    pub forward_seed: bool,
}

fn default_endpoint() -> String {
    "http://localhost:11434/v1/completions".into()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: default_endpoint(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            max_attempts: default_max_attempts(),
            backoff_ms: default_backoff_ms(),
            max_in_flight: default_max_in_flight(),
            forward_seed: true,
        }
    }
}

impl LiveConfig {
    /// Applies `ABSA_ENDPOINT` / `ABSA_API_KEY` when set.
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            if !v.trim().is_empty() {
                self.endpoint = v;
            }
        }
        if let Ok(v) = std::env::var(API_KEY_ENV) {
            if !v.is_empty() {
                self.api_key = Some(v);
            }
        }
    }
}

/// Counting semaphore capping in-flight requests.
struct InFlight {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.slots.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.slots.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

enum AttemptError {
    Retryable(String),
    Timeout,
    Fatal(GatewayError),
}

pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
    name: String,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        if config.max_attempts == 0 {
            return Err(GatewayError::Params("max_attempts must be >= 1".into()));
        }
        if config.max_in_flight == 0 {
            return Err(GatewayError::Params("max_in_flight must be >= 1".into()));
        }
        if config.timeout_secs == 0 {
            return Err(GatewayError::Params("timeout_secs must be >= 1".into()));
        }
        reqwest::Url::parse(&config.endpoint)
            .map_err(|e| GatewayError::Params(format!("bad endpoint {:?}: {e}", config.endpoint)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Params(e.to_string()))?;
        Ok(LiveBackend {
            in_flight: InFlight {
                slots: Mutex::new(config.max_in_flight),
                freed: Condvar::new(),
            },
            name: format!("live:{}", config.endpoint),
            config,
            client,
        })
    }

    /// Request body sent to the endpoint.
    pub fn request_body(&self, request: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "stop": [request.stop_sequence],
            "max_tokens": request.max_tokens,
        });
        if self.config.forward_seed {
            body["seed"] = json!(request.seed);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Choice, AttemptError> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Retryable(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(GatewayError::Auth {
                status: status.as_u16(),
            }));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AttemptError::Fatal(GatewayError::Protocol(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                AttemptError::Timeout
            } else {
                AttemptError::Fatal(GatewayError::Protocol(format!("bad response body: {e}")))
            }
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AttemptError::Fatal(GatewayError::Protocol("response has no choices".into())))
    }
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest) -> Result<RawGeneration, GatewayError> {
        request.validate()?;
        let body = self.request_body(request);
        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let mut last_error = String::new();
        let mut timed_out = false;
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Ok(choice) => {
                    let (text, found) = truncate_at_stop(&choice.text, &request.stop_sequence);
                    let finish_reason = match choice.finish_reason.as_deref() {
                        Some("length") if !found => FinishReason::Length,
                        _ => FinishReason::Stop,
                    };
                    return Ok(RawGeneration {
                        text,
                        finish_reason,
                        latency: started.elapsed(),
                        backend: self.name.clone(),
                        seed_forwarded: self.config.forward_seed,
                    });
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Timeout) => {
                    timed_out = true;
                    last_error = "timeout".into();
                    log::warn!("attempt {attempt}/{}: request timed out", self.config.max_attempts);
                }
                Err(AttemptError::Retryable(msg)) => {
                    timed_out = false;
                    log::warn!("attempt {attempt}/{}: {msg}", self.config.max_attempts);
                    last_error = msg;
                }
            }
        }
        if timed_out {
            Err(GatewayError::Timeout {
                attempts: self.config.max_attempts,
                timeout: Duration::from_secs(self.config.timeout_secs),
            })
        } else {
            Err(GatewayError::Transport {
                attempts: self.config.max_attempts,
                message: last_error,
            })
        }
    }
}
