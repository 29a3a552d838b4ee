//! Deterministic stand-ins for a chat model.

use std::collections::HashMap;
use std::path::Path;

use super::client::{ChatClient, ChatRequest, ClientError};

/// Replies with text derived only from the request digest, so identical
/// requests always get identical replies.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl ChatClient for EchoClient {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let d = request.digest();
        Ok(format!(
            "(1) Mock region {} seen in {} image(s). (2) Mock layout {}.",
            &d[..12],
            request.images.len(),
            &d[12..24]
        ))
    }

    fn backend(&self) -> String {
        "mock".into()
    }
}

/// Canned replies keyed by request digest, loaded from a JSON object
/// `{"<digest>": "<reply>", ...}`.
#[derive(Default)]
pub struct FixtureClient {
    replies: HashMap<String, String>,
    fallback: Option<Box<dyn ChatClient>>,
}

impl FixtureClient {
    pub fn new(replies: HashMap<String, String>) -> Self {
        Self {
            replies,
            fallback: None,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_slice(bytes)?))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Client used for digests missing from the fixture.
    pub fn with_fallback(mut self, fallback: Box<dyn ChatClient>) -> Self {
        self.fallback = Some(fallback);
        self
    }
}

impl ChatClient for FixtureClient {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let d = request.digest();
        match (self.replies.get(&d), &self.fallback) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(f)) => f.send(request),
            (None, None) => Err(ClientError::NoCannedReply(d)),
        }
    }

    fn backend(&self) -> String {
        "mock-fixture".into()
    }
}

/// Wraps a closure; the building block for test and oracle judges.
pub struct ScriptedClient<F> {
    name: String,
    script: F,
}

impl<F> ScriptedClient<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<String, ClientError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, script: F) -> Self {
        Self {
            name: name.into(),
            script,
        }
    }
}

impl<F> ChatClient for ScriptedClient<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<String, ClientError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        (self.script)(request)
    }

    fn backend(&self) -> String {
        self.name.clone()
    }
}
