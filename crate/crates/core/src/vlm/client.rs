use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{PromptDocument, VlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            temperature: 0.0,
        }
    }
}

impl EndpointConfig {
    fn credential(&self) -> Result<String, VlmError> {
        match std::env::var(&self.api_key_env) {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(VlmError::MissingCredential(self.api_key_env.clone())),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

enum Attempt {
    Done(String),
    Retry(VlmError),
    Fatal(VlmError),
}

fn attempt(client: &reqwest::blocking::Client, cfg: &EndpointConfig, key: &str, body: &serde_json::Value) -> Attempt {
    let resp = match client.post(&cfg.url).bearer_auth(key).json(body).send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Attempt::Retry(VlmError::Timeout),
        Err(e) => return Attempt::Retry(VlmError::Transport(e.to_string())),
    };
    let status = resp.status();
    if status.is_server_error() || status.as_u16() == 429 {
        return Attempt::Retry(VlmError::Transport(format!("HTTP {}", status.as_u16())));
    }
    if !status.is_success() {
        return Attempt::Fatal(VlmError::Transport(format!("HTTP {}", status.as_u16())));
    }
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) if e.is_timeout() => return Attempt::Retry(VlmError::Timeout),
        Err(e) => return Attempt::Retry(VlmError::Transport(e.to_string())),
    };
    match serde_json::from_str::<ChatResponse>(&text) {
        Ok(mut r) if !r.choices.is_empty() => Attempt::Done(r.choices.swap_remove(0).message.content),
        Ok(_) => Attempt::Fatal(VlmError::Transport("response has no choices".into())),
        Err(e) => Attempt::Fatal(VlmError::Transport(format!("unexpected response body: {e}"))),
    }
}

/// Sends the prompt as one user message and returns the assistant text.
///
/// Transport failures, timeouts, 429 and 5xx responses are retried up to
/// `max_retries` more times with exponential backoff.
pub fn call_chat_endpoint(prompt: &PromptDocument, cfg: &EndpointConfig) -> Result<String, VlmError> {
    let key = cfg.credential()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_secs.max(0.001)))
        .build()
        .map_err(|e| VlmError::Transport(e.to_string()))?;
    let body = json!({
        "model": cfg.model,
        "messages": [{ "role": "user", "content": prompt.text }],
        "temperature": cfg.temperature,
    });

    let mut last_err = VlmError::Transport("no attempt made".into());
    for n in 0..=cfg.max_retries {
        if n > 0 {
            let delay = cfg.backoff_ms.saturating_mul(1u64 << (n - 1).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
        match attempt(&client, cfg, &key, &body) {
            Attempt::Done(text) => return Ok(text),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => last_err = e,
        }
    }
    Err(last_err)
}
