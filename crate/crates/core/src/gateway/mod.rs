//! Uniform generation interface over completion backends.
//!
//! [`live::LiveBackend`] talks to an OpenAI-style `/v1/completions`
//! endpoint (see `docs/wire-protocol.md`). The other backends are
//! deterministic and used for tests and pipeline checks:
//!
//! * `replay_gold` answers with the gold label of the requested example,
//! * `perturb` answers with gold but flips the polarity of a seeded
//!   fraction of tuples,
//! * `scripted` plays back a fixed list of responses per attempt.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;

pub mod live;
pub mod synthetic;

pub use live::{LiveBackend, LiveConfig};
pub use synthetic::{PerturbBackend, PerturbSelector, ReplayGoldBackend, ScriptStep, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_STOP: &str = "]";
pub const DEFAULT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request timed out after {attempts} attempt(s) ({timeout:?} each)")]
    Timeout { attempts: u32, timeout: Duration },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown backend kind {0:?} (expected live, replay_gold, scripted or perturb)")]
    UnknownBackend(String),
    #[error("invalid backend parameters: {0}")]
    Params(String),
}

/// Where a request sits in the experiment. Deterministic backends key their
/// answers on this; the live backend ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RequestContext {
    pub example_id: Option<usize>,
    pub generation_seed: u64,
    /// 1-based regeneration attempt.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub stop_sequence: String,
    pub seed: u64,
    pub max_tokens: u32,
    pub model: String,
    pub context: RequestContext,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>, seed: u64) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            stop_sequence: DEFAULT_STOP.to_string(),
            seed,
            max_tokens: DEFAULT_MAX_TOKENS,
            model: model.into(),
            context: RequestContext {
                example_id: None,
                generation_seed: seed,
                attempt: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGeneration {
    /// Completion text with the stop sequence removed.
    pub text: String,
    pub finish_reason: FinishReason,
    /// Deterministic backends report zero so records stay byte-reproducible.
    pub latency: Duration,
    pub backend: String,
    pub seed_forwarded: bool,
}

/// Cuts `text` at the first occurrence of `stop`. Returns whether the stop
/// sequence was found.
pub fn truncate_at_stop(text: &str, stop: &str) -> (String, bool) {
    if stop.is_empty() {
        return (text.to_string(), false);
    }
    match text.find(stop) {
        Some(at) => (text[..at].to_string(), true),
        None => (text.to_string(), false),
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<RawGeneration, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    ReplayGold,
    Scripted,
    Perturb,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Live => "live",
            BackendKind::ReplayGold => "replay_gold",
            BackendKind::Scripted => "scripted",
            BackendKind::Perturb => "perturb",
        })
    }
}

impl FromStr for BackendKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendKind::Live),
            "replay_gold" | "replay-gold" | "replay" => Ok(BackendKind::ReplayGold),
            "scripted" => Ok(BackendKind::Scripted),
            "perturb" => Ok(BackendKind::Perturb),
            other => Err(GatewayError::UnknownBackend(other.to_string())),
        }
    }
}

/// Backend selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Live(LiveConfig),
    ReplayGold,
    Scripted {
        /// JSON script file, see [`ScriptedBackend::from_json`].
        script: PathBuf,
    },
    Perturb {
        rate: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl BackendSpec {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendSpec::Live(_) => BackendKind::Live,
            BackendSpec::ReplayGold => BackendKind::ReplayGold,
            BackendSpec::Scripted { .. } => BackendKind::Scripted,
            BackendSpec::Perturb { .. } => BackendKind::Perturb,
        }
    }
}

/// Builds a backend. `corpus` supplies the gold labels for `replay_gold`
/// and `perturb`; it is ignored by the other kinds.
pub fn make_backend(spec: &BackendSpec, corpus: &[Example]) -> Result<Box<dyn Backend>, GatewayError> {
    Ok(match spec {
        BackendSpec::Live(cfg) => Box::new(LiveBackend::new(cfg.clone())?),
        BackendSpec::ReplayGold => Box::new(ReplayGoldBackend::new(corpus)),
        BackendSpec::Scripted { script } => {
            let text = std::fs::read_to_string(script)
                .map_err(|e| GatewayError::Params(format!("cannot read script {}: {e}", script.display())))?;
            Box::new(ScriptedBackend::from_json(&text)?)
        }
        BackendSpec::Perturb { rate, seed } => Box::new(PerturbBackend::new(corpus, *rate, *seed)?),
    })
}
