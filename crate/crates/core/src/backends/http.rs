//! OpenAI-compatible chat-completions backend.
//!
//! Requests go through a [`Transport`] so interactions can be recorded once
//! and replayed offline. Request bodies are built from `serde_json::json!`
//! objects, whose keys serialize in sorted order; identical inputs therefore
//! produce identical bytes.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{reasoning_messages, Backend, BackendError, CancellationToken, Completion, TokenDistribution};
use crate::config::ConfigError;
use crate::transcript::{ReasoningStep, StepSource, Transcript, TranscriptError, WhitespaceTokenizer};

fn default_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".to_owned())
}

fn default_timeout() -> u64 {
    60_000
}

fn default_top_logprobs() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
}

impl HttpSpec {
    pub fn new(endpoint: &str, model_name: &str) -> Self {
        Self {
            endpoint: Some(endpoint.to_owned()),
            model_name: Some(model_name.to_owned()),
            api_key_env: default_key_env(),
            timeout_ms: default_timeout(),
            top_logprobs: default_top_logprobs(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(ConfigError::Invalid("http backend requires an endpoint".into()));
        }
        if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
            return Err(ConfigError::Invalid("http backend requires a model_name".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ConfigError::NonPositive("timeout_ms"));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpReply {
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after: Option<String>,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport failure: {0}")]
    Io(String),
    #[error("no recorded interaction for request to {0}")]
    NoFixture(String),
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError::Io(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Ok(HttpReply {
            status,
            retry_after,
            body,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub url: String,
    pub request: Value,
    pub response: HttpReply,
}

/// On-disk record of HTTP interactions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FixtureFile {
    pub interactions: Vec<Interaction>,
}

impl FixtureFile {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }
}

/// Answers requests from a fixture by exact URL and body match.
pub struct ReplayTransport {
    fixture: FixtureFile,
}

impl ReplayTransport {
    pub fn new(fixture: FixtureFile) -> Self {
        Self { fixture }
    }
}

impl Transport for ReplayTransport {
    fn post_json(&self, url: &str, body: &Value, _bearer: Option<&str>) -> Result<HttpReply, TransportError> {
        self.fixture
            .interactions
            .iter()
            .find(|i| i.url == url && &i.request == body)
            .map(|i| i.response.clone())
            .ok_or_else(|| TransportError::NoFixture(url.to_owned()))
    }
}

/// Forwards to an inner transport and keeps every exchange. Bearer tokens are
/// never recorded.
pub struct RecordingTransport {
    inner: Arc<dyn Transport>,
    log: Mutex<FixtureFile>,
}

impl RecordingTransport {
    pub fn new(inner: Arc<dyn Transport>) -> Self {
        Self {
            inner,
            log: Mutex::new(FixtureFile::default()),
        }
    }

    pub fn fixture(&self) -> FixtureFile {
        self.log.lock().expect("recording lock poisoned").clone()
    }
}

impl Transport for RecordingTransport {
    fn post_json(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<HttpReply, TransportError> {
        let reply = self.inner.post_json(url, body, bearer)?;
        self.log
            .lock()
            .expect("recording lock poisoned")
            .interactions
            .push(Interaction {
                url: url.to_owned(),
                request: body.clone(),
                response: reply.clone(),
            });
        Ok(reply)
    }
}

pub struct HttpBackend {
    spec: HttpSpec,
    transport: Arc<dyn Transport>,
    max_response_tokens: u32,
    label: String,
}

impl HttpBackend {
    pub fn new(spec: HttpSpec, transport: Arc<dyn Transport>, max_response_tokens: u32) -> Self {
        let label = spec.model_name.clone().unwrap_or_else(|| "http".into());
        Self {
            spec,
            transport,
            max_response_tokens,
            label,
        }
    }

    /// Body of a step-generation request.
    pub fn step_request(&self, context: &Transcript) -> Value {
        let (system, user) = reasoning_messages(context);
        json!({
            "model": self.spec.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "max_tokens": self.max_response_tokens,
            "temperature": 0.0,
            "stop": ["\n\n"],
        })
    }

    /// Body of a scoring request: a single token with its top alternatives.
    pub fn score_request(&self, prompt: &str) -> Value {
        json!({
            "model": self.spec.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": true,
            "top_logprobs": self.spec.top_logprobs,
        })
    }

    fn send(&self, body: &Value, cancel: &CancellationToken) -> Result<Value, BackendError> {
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        let bearer = self.spec.api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
        let reply = self
            .transport
            .post_json(&self.spec.url(), body, bearer.as_deref())
            .map_err(|e| BackendError::unavailable(e.to_string()))?;
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        if !(200..300).contains(&reply.status) {
            return Err(BackendError::Unavailable {
                status: Some(reply.status),
                retry_after: reply.retry_after,
                message: reply.body.to_string(),
            });
        }
        Ok(reply.body)
    }

    fn step(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
        source: StepSource,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        if context.is_sealed() {
            return Err(TranscriptError::SealedTranscript.into());
        }
        let body = self.send(&self.step_request(context), cancel)?;
        let choice = &body["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
        let text = first_paragraph(content);
        let step = ReasoningStep::new(context.next_round(), text, source, &WhitespaceTokenizer)
            .map_err(|_| BackendError::Malformed("empty reasoning step".into()))?;
        if choice["finish_reason"].as_str() == Some("length") {
            return Err(BackendError::ResponseTooLong {
                partial: Box::new(step),
            });
        }
        Ok(Completion { value: step, cost: 0 })
    }
}

/// Text up to the first blank line.
fn first_paragraph(content: &str) -> &str {
    let trimmed = content.trim_start_matches(['\n', '\r']);
    let end = trimmed
        .find("\n\n")
        .or_else(|| trimmed.find("\r\n\r\n"))
        .unwrap_or(trimmed.len());
    trimmed[..end].trim_end()
}

impl Backend for HttpBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn is_simulated(&self) -> bool {
        false
    }

    fn generate_step(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        self.step(context, cancel, StepSource::DraftAccepted)
    }

    fn generate_update(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        self.step(context, cancel, StepSource::TargetGenerated)
    }

    fn score_candidate(
        &self,
        prompt: &str,
        cancel: &CancellationToken,
    ) -> Result<Completion<TokenDistribution>, BackendError> {
        let body = self.send(&self.score_request(prompt), cancel)?;
        let top = body["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
            .as_array()
            .filter(|a| !a.is_empty())
            .ok_or(BackendError::MissingLogprobs)?;
        let mut entries = Vec::with_capacity(top.len());
        for item in top {
            let token = item["token"]
                .as_str()
                .ok_or_else(|| BackendError::Malformed("top_logprobs entry without token".into()))?;
            let logprob = item["logprob"]
                .as_f64()
                .ok_or_else(|| BackendError::Malformed("top_logprobs entry without logprob".into()))?;
            entries.push((token.to_owned(), logprob.exp().min(1.0)));
        }
        Ok(Completion {
            value: TokenDistribution::new(entries)?,
            cost: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_requires_endpoint_and_model() {
        let mut spec = HttpSpec::new("http://localhost:8000/v1", "m");
        spec.validate().unwrap();
        spec.endpoint = None;
        assert!(spec.validate().is_err());
        let spec = HttpSpec {
            model_name: None,
            ..HttpSpec::new("http://x", "m")
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn url_joining() {
        assert_eq!(HttpSpec::new("http://h/v1/", "m").url(), "http://h/v1/chat/completions");
        assert_eq!(
            HttpSpec::new("http://h/v1/chat/completions", "m").url(),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn paragraph_split() {
        assert_eq!(first_paragraph("\nFirst idea.\n\nSecond."), "First idea.");
        assert_eq!(first_paragraph("only one"), "only one");
    }
}
