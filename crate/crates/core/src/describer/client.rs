use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("upstream returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode upstream reply: {0}")]
    Decode(String),
    #[error("no canned reply for request digest {0}")]
    NoCannedReply(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Base delay between attempts; doubles after every failure.
    pub backoff_ms: u64,
    pub max_tokens: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            max_tokens: 512,
        }
    }
}

/// One model call. Images are PNG bytes in the order the model sees them.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub images: &'a [Vec<u8>],
    pub text: &'a str,
    pub params: &'a ModelParams,
}

impl ChatRequest<'_> {
    pub fn digest(&self) -> String {
        request_digest(self.text, self.images)
    }
}

/// SHA-256 over the prompt and every image, each image length-prefixed.
pub fn request_digest(text: &str, images: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    h.update((text.len() as u64).to_le_bytes());
    h.update(text.as_bytes());
    for img in images {
        h.update((img.len() as u64).to_le_bytes());
        h.update(img);
    }
    hex::encode(h.finalize())
}

/// A chat model that accepts text plus zero or more images. Text-only
/// judges use the same interface with no images.
pub trait ChatClient: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError>;

    /// Short backend name for reports and health checks.
    fn backend(&self) -> String;
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        (**self).send(request)
    }
    fn backend(&self) -> String {
        (**self).backend()
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Arc<T> {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        (**self).send(request)
    }
    fn backend(&self) -> String {
        (**self).backend()
    }
}

impl<T: ChatClient + ?Sized> ChatClient for Box<T> {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        (**self).send(request)
    }
    fn backend(&self) -> String {
        (**self).backend()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("model call failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
pub struct RetryError {
    pub attempts: Vec<String>,
}

/// Calls the client up to `max_retries` times (at least once), sleeping
/// `backoff_ms * 2^k` between attempts.
pub fn send_with_retries(
    client: &dyn ChatClient,
    request: &ChatRequest<'_>,
) -> Result<String, RetryError> {
    let attempts = request.params.max_retries.max(1);
    let mut log = Vec::new();
    for k in 0..attempts {
        match client.send(request) {
            Ok(reply) => return Ok(reply),
            Err(e) => log.push(e.to_string()),
        }
        if k + 1 < attempts && request.params.backoff_ms > 0 {
            let delay = request.params.backoff_ms.saturating_mul(1 << k.min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
    }
    Err(RetryError { attempts: log })
}
