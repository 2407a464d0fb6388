//! OpenAI-compatible chat-completion client (blocking).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    estimate_prompt_tokens, estimate_tokens, BackendError, CallKey, CompletionBackend,
    CompletionParams, CompletionResult, RateGate, RatePolicy,
};
use crate::contexts::{ChatMessage, PromptBundle};

/// A live model endpoint. The credential lives in the named environment variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendId {
    pub provider: String,
    pub model: String,
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each one after.
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: default_max_attempts(),
            initial_backoff_ms: default_backoff_ms(),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempt: u32) -> Duration {
        let factor = 1u64 << (failed_attempt.saturating_sub(1)).min(16);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ResponseChoice>,
    #[serde(default)]
    usage: Option<ResponseUsage>,
}

#[derive(Deserialize)]
struct ResponseChoice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ResponseUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Compact JSON request body for a bundle, messages in bundle order.
pub fn request_body(model: &str, bundle: &PromptBundle, params: &CompletionParams) -> String {
    serde_json::to_string(&ChatRequest {
        model,
        messages: &bundle.messages,
        temperature: params.temperature,
        max_tokens: params.max_output_tokens,
        seed: params.seed,
    })
    .expect("request serializes")
}

/// Extracts `(text, input_tokens, output_tokens, estimated)` from a response body.
pub fn parse_response_body(
    body: &str,
    bundle: &PromptBundle,
) -> Result<(String, u64, u64, bool), String> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| format!("malformed response body: {e}"))?;
    let text = resp
        .choices
        .into_iter()
        .next()
        .ok_or("response has no choices")?
        .message
        .content
        .unwrap_or_default();
    let reported = resp
        .usage
        .and_then(|u| Some((u.prompt_tokens?, u.completion_tokens?)));
    Ok(match reported {
        Some((i, o)) => (text, i, o, false),
        None => {
            let o = estimate_tokens(&text);
            (text, estimate_prompt_tokens(bundle), o, true)
        }
    })
}

pub struct OpenAiBackend {
    id: BackendId,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    gate: RateGate,
    system_role: bool,
}

impl OpenAiBackend {
    /// Resolves the credential now so a missing variable fails before any call.
    pub fn new(id: BackendId, retry: RetryPolicy, timeout: Duration) -> Result<Self, BackendError> {
        let api_key = match &id.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!(
                    "credential variable {var} for model {} is not set",
                    id.model
                ))
            })?),
            None => None,
        };
        if retry.max_attempts == 0 {
            return Err(BackendError::Config(
                "retry.max_attempts must be >= 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self {
            id,
            api_key,
            retry,
            client,
            gate: RateGate::new(RatePolicy::unlimited()),
            system_role: true,
        })
    }

    pub fn with_gate(mut self, gate: RateGate) -> Self {
        self.gate = gate;
        self
    }

    pub fn with_system_role(mut self, yes: bool) -> Self {
        self.system_role = yes;
        self
    }

    pub fn id(&self) -> &BackendId {
        &self.id
    }

    fn send_once(&self, body: &str) -> Result<String, SendError> {
        let _permit = self.gate.acquire().map_err(|_| SendError::Closed)?;
        let mut req = self
            .client
            .post(&self.id.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| SendError::Failed(format!("transport: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| SendError::Failed(format!("reading body: {e}")))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(SendError::Failed(format!("HTTP {status}: {snippet}")));
        }
        Ok(text)
    }
}

enum SendError {
    Closed,
    Failed(String),
}

impl CompletionBackend for OpenAiBackend {
    fn model(&self) -> &str {
        &self.id.model
    }

    fn complete(
        &self,
        _key: &CallKey<'_>,
        bundle: &PromptBundle,
        params: &CompletionParams,
    ) -> Result<CompletionResult, BackendError> {
        let body = request_body(&self.id.model, bundle, params);
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            let started = Instant::now();
            let outcome = self
                .send_once(&body)
                .and_then(|raw| parse_response_body(&raw, bundle).map_err(SendError::Failed));
            match outcome {
                Ok((text, input_tokens, output_tokens, tokens_estimated)) => {
                    return Ok(CompletionResult {
                        text,
                        input_tokens,
                        output_tokens,
                        tokens_estimated,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt,
                    })
                }
                Err(SendError::Closed) => return Err(BackendError::Cancelled),
                Err(SendError::Failed(e)) => {
                    log::warn!("{} attempt {attempt}: {e}", self.id.model);
                    last = e;
                }
            }
        }
        Err(BackendError::Exhausted {
            attempts: self.retry.max_attempts,
            message: last,
        })
    }

    fn shutdown(&self) {
        self.gate.shutdown();
    }

    fn supports_system_role(&self) -> bool {
        self.system_role
    }
}
