//! Chat-vision client speaking the common chat-completions wire format.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{ChatClient, ChatRequest, ClientError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Zero disables rate limiting.
    pub requests_per_minute: u32,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "TOL_API_KEY".into(),
            requests_per_minute: 60,
        }
    }
}

/// Spaces calls at least `60 / rpm` seconds apart across all threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        Self {
            interval: (rpm > 0).then(|| Duration::from_secs_f64(60.0 / f64::from(rpm))),
            next: Mutex::new(None),
        }
    }

    /// Reserves the next slot and returns how long the caller must wait.
    pub fn reserve(&self, now: Instant) -> Duration {
        let Some(interval) = self.interval else {
            return Duration::ZERO;
        };
        let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
        let slot = next.map_or(now, |n| n.max(now));
        *next = Some(slot + interval);
        slot - now
    }

    pub fn wait(&self) {
        let d = self.reserve(Instant::now());
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

/// `{"model", "max_tokens", "messages":[{"role":"user","content":[image parts..., text part]}]}`
pub fn request_body(request: &ChatRequest<'_>) -> Value {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut content: Vec<Value> = request
        .images
        .iter()
        .map(|png| {
            json!({
                "type": "image_url",
                "image_url": { "url": format!("data:image/png;base64,{}", b64.encode(png)) }
            })
        })
        .collect();
    content.push(json!({ "type": "text", "text": request.text }));
    json!({
        "model": request.params.model,
        "max_tokens": request.params.max_tokens,
        "messages": [{ "role": "user", "content": content }],
    })
}

/// Extracts `choices[0].message.content`, accepting either a string or a
/// list of text parts.
pub fn parse_response(body: &Value) -> Result<String, ClientError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ClientError::Decode("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(ClientError::Decode(
            "content is neither text nor parts".into(),
        )),
    }
}

pub struct HttpClient {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: HttpBackendConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpBackendConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            config,
            api_key,
            agent,
        }
    }
}

impl ChatClient for HttpClient {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        self.limiter.wait();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .config()
            .timeout_global(Some(Duration::from_secs(
                request.params.timeout_secs.max(1),
            )))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        } else if !self.config.endpoint.starts_with("http://127.0.0.1")
            && !self.config.endpoint.starts_with("http://localhost")
        {
            return Err(ClientError::MissingApiKey(self.config.api_key_env.clone()));
        }
        let mut resp = req
            .send_json(request_body(request))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Status { status, body: text });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?;
        parse_response(&v)
    }

    fn backend(&self) -> String {
        "http".into()
    }
}
