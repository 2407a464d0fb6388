//! Chat-completion backends.
//!
//! Every backend answers a rendered [`PromptBundle`] with raw text plus usage.
//! Three kinds exist: a live OpenAI-compatible HTTP client, a synthetic CRRA
//! agent that answers from expected utility, and a replay source fed by a
//! JSON-lines fixture.

mod catalog;
mod gate;
mod openai;
mod replay;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contexts::PromptBundle;

pub use catalog::{model_catalog, CatalogEntry};
pub use gate::{GateClosed, GatePermit, RateGate, RatePolicy};
pub use openai::{parse_response_body, request_body, BackendId, OpenAiBackend, RetryPolicy};
pub use replay::{load_fixture, write_fixture, ReplayBackend, ReplayEntry};
pub use synthetic::{SyntheticAgentSpec, SyntheticBackend};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Network, timeout or non-2xx failure that survived every retry.
    #[error("request failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("replay fixture: {0}")]
    Fixture(String),
    #[error("cancelled while waiting for admission")]
    Cancelled,
}

impl BackendError {
    /// API requests actually sent before this error surfaced.
    pub fn attempts(&self) -> u32 {
        match self {
            BackendError::Exhausted { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            seed: None,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::Config("max_output_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Token counts came from the length heuristic, not a provider usage report.
    #[serde(default)]
    pub tokens_estimated: bool,
    pub latency_ms: u64,
    /// Requests sent for this completion, including retries.
    pub attempt: u32,
}

impl CompletionResult {
    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

/// Rough token count used when a provider omits usage: one token per four characters.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub fn estimate_prompt_tokens(bundle: &PromptBundle) -> u64 {
    bundle
        .messages
        .iter()
        .map(|m| estimate_tokens(&m.content))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    /// The elicitation itself, or a fresh-conversation re-ask of it.
    Elicit,
    /// The deduction question appended after an answer.
    Followup,
}

/// Identifies one call within a run, for backends that key on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallKey<'a> {
    pub context_id: &'a str,
    pub trial: u32,
    /// 0 for the first ask, 1 for the re-ask after an unusable answer.
    pub ask: u32,
    pub kind: CallKind,
}

pub trait CompletionBackend: Send + Sync {
    fn model(&self) -> &str;

    fn complete(
        &self,
        key: &CallKey<'_>,
        bundle: &PromptBundle,
        params: &CompletionParams,
    ) -> Result<CompletionResult, BackendError>;

    /// Wake anything blocked on admission; subsequent calls fail with `Cancelled`.
    fn shutdown(&self) {}

    /// Whether the backend can take a system-role message.
    fn supports_system_role(&self) -> bool {
        true
    }
}

/// Declarative backend description as it appears in experiment config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Openai {
        #[serde(flatten)]
        id: BackendId,
        #[serde(default)]
        rate_limit: RatePolicy,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_true")]
        system_role: bool,
    },
    Synthetic(SyntheticAgentSpec),
    Replay {
        model: String,
        fixture: PathBuf,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_true() -> bool {
    true
}

impl BackendSpec {
    pub fn model(&self) -> &str {
        match self {
            BackendSpec::Openai { id, .. } => &id.model,
            BackendSpec::Synthetic(s) => &s.model,
            BackendSpec::Replay { model, .. } => model,
        }
    }

    /// Seeds that influence this backend's output, for the run manifest.
    pub fn rng_seed(&self) -> Option<u64> {
        match self {
            BackendSpec::Synthetic(s) => Some(s.rng_seed),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        Ok(match self {
            BackendSpec::Openai {
                id,
                rate_limit,
                retry,
                timeout_secs,
                system_role,
            } => Arc::new(
                OpenAiBackend::new(id.clone(), *retry, Duration::from_secs(*timeout_secs))?
                    .with_gate(RateGate::new(*rate_limit))
                    .with_system_role(*system_role),
            ),
            BackendSpec::Synthetic(spec) => Arc::new(SyntheticBackend::new(spec.clone())?),
            BackendSpec::Replay { model, fixture } => {
                Arc::new(ReplayBackend::from_file(model, fixture)?)
            }
        })
    }
}
