use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{count_tokens, Backend, GenResult, ModelSpec};
use crate::error::{BackendError, Error, Result};

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_max_tokens() -> u32 {
    256
}

/// Connection settings for an OpenAI-compatible chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    /// Upstream model identifier sent in the request body.
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Extra attempts after the first one fails with a retryable error.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Initial backoff; doubled after each failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Blocking client for an OpenAI-compatible upstream.
pub struct RemoteBackend {
    spec: ModelSpec,
    cfg: RemoteConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("spec", &self.spec)
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(spec: ModelSpec, cfg: RemoteConfig) -> Result<Self> {
        let token = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!(
                    "model {}: environment variable {var} is not set",
                    spec.name
                ))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteBackend {
            spec,
            cfg,
            agent,
            token,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let cfg: RemoteConfig = serde_json::from_value(spec.params.clone())
            .map_err(|e| Error::Config(format!("model {}: {e}", spec.name)))?;
        RemoteBackend::new(spec.clone(), cfg)
    }

    fn attempt(&self, input: &str) -> Result<GenResult, BackendError> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage {
                role: "user",
                content: input,
            }],
            max_tokens: self.cfg.max_tokens,
        };
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| self.transport_error(e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::HttpStatus(status));
        }
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        let parsed: ChatResponse = serde_json::from_str(&raw)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?;
        let usage = parsed.usage.as_ref();
        Ok(GenResult {
            tokens_in: usage
                .and_then(|u| u.prompt_tokens)
                .unwrap_or_else(|| count_tokens(input)),
            tokens_out: usage
                .and_then(|u| u.completion_tokens)
                .unwrap_or_else(|| count_tokens(&text)),
            text,
        })
    }

    fn transport_error(&self, e: ureq::Error) -> BackendError {
        match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(self.cfg.timeout_ms),
            ureq::Error::StatusCode(code) => BackendError::HttpStatus(code),
            ureq::Error::Json(e) => BackendError::MalformedResponse(e.to_string()),
            other => BackendError::Transport(other.to_string()),
        }
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Timeout(_) | BackendError::Transport(_) => true,
        BackendError::HttpStatus(code) => *code == 429 || *code >= 500,
        _ => false,
    }
}

impl Backend for RemoteBackend {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn generate(&self, input: &str, _rng: &mut dyn RngCore) -> Result<GenResult, BackendError> {
        if input.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(input) {
                Ok(r) => return Ok(r),
                Err(e) if retryable(&e) && attempt < self.cfg.retries => {
                    attempt += 1;
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
