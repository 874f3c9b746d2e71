//! Chat-completions HTTP backend.
//!
//! One request per sample, each carrying a single user message. Transport
//! failures and 5xx replies are retried with exponential backoff; any other
//! non-success status is returned as [`Error::Remote`].

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest, Embedder};
use crate::error::{Error, Result};
use crate::text_metrics::EmbeddingVector;

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Debug)]
pub struct LiveBackend {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(Error),
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        LiveBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
            agent,
        }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn attempt(&self, path: &str, body: &Value) -> Attempt {
        let url = format!("{}/{}", self.base_url, path);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("{url}: {e}")),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("{url}: reading body: {e}")),
        };
        match status {
            200..=299 => Attempt::Done(text),
            500..=599 => Attempt::Retry(format!("{url}: status {status}: {text}")),
            _ => Attempt::Fail(Error::Remote { status, body: text }),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(path, body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(reason) => {
                    log_retry(&reason, attempt + 1, self.retry.attempts);
                    last = reason;
                }
            }
        }
        Err(Error::BackendUnavailable(last))
    }
}

fn log_retry(reason: &str, attempt: u32, attempts: u32) {
    log::warn!("request failed (attempt {attempt}/{attempts}): {reason}");
}

fn malformed(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Remote {
        status: 200,
        body: format!("malformed {what} response: {e}"),
    }
}

impl CompletionBackend for LiveBackend {
    fn backend_id(&self) -> String {
        format!("live:{}", self.base_url)
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String> {
        let params = request.params;
        let mut body = json!({
            "model": params.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "n": 1,
        });
        if let Some(seed) = params.seed {
            // Distinct samples of one prompt need distinct seeds.
            body["seed"] = json!(seed.wrapping_add(u64::from(request.sample_index)));
        }
        let text = self.post("chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| malformed("chat", e))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| malformed("chat", "no choices"))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

impl Embedder for LiveBackend {
    fn backend_id(&self) -> String {
        format!("live:{}", self.base_url)
    }

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector> {
        let body = json!({ "model": model_id, "input": text });
        let raw = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| malformed("embedding", e))?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| malformed("embedding", "no data"))?;
        EmbeddingVector::new(datum.embedding, model_id)
    }
}
