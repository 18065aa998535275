//! Model backends: step generation, target updates, and verifier scoring.
//!
//! Two implementations share one trait. [`SimulatedBackend`] is a pure
//! function of its seed and the request, and reports how many virtual ticks
//! each call would take. [`HttpBackend`] talks to an OpenAI-compatible
//! chat-completions endpoint and blocks for real.

mod cancel;
mod http;
mod simulated;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cancel::CancellationToken;
pub use http::{
    FixtureFile, HttpBackend, HttpReply, HttpSpec, Interaction, RecordingTransport, ReplayTransport, Transport,
    TransportError, UreqTransport,
};
pub use simulated::{Latency, Quality, SimulatedBackend, SimulatedSpec};

use crate::trace::Ticks;
use crate::transcript::{ReasoningStep, Transcript, TranscriptError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable (status {status:?}, retry after {retry_after:?}): {message}")]
    Unavailable {
        status: Option<u16>,
        retry_after: Option<String>,
        message: String,
    },
    #[error("response exceeded the token limit and was truncated")]
    ResponseTooLong { partial: Box<ReasoningStep> },
    #[error("endpoint returned no log-probabilities")]
    MissingLogprobs,
    #[error("cancelled")]
    Cancelled,
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::Unavailable {
            status: None,
            retry_after: None,
            message: message.into(),
        }
    }
}

/// First-token probabilities reported by a scoring call.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: BTreeMap<String, f64>,
}

impl TokenDistribution {
    /// Probabilities must lie in [0, 1] and sum to at most 1 (plus rounding);
    /// top-k truncation may leave mass unaccounted for. Repeated tokens add up.
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self, BackendError> {
        let mut map = BTreeMap::new();
        for (token, p) in entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Malformed(format!(
                    "probability {p} for {token:?} outside [0,1]"
                )));
            }
            *map.entry(token).or_insert(0.0) += p;
        }
        let total: f64 = map.values().sum();
        if total > 1.0 + 1e-6 {
            return Err(BackendError::Malformed(format!("probabilities sum to {total}")));
        }
        Ok(Self { entries: map })
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    pub fn get(&self, token: &str) -> Option<f64> {
        self.entries.get(token).copied()
    }
}

/// A backend result and the virtual ticks it cost. Live backends report zero
/// because the time has already passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion<T> {
    pub value: T,
    pub cost: Ticks,
}

pub trait Backend: Send + Sync {
    fn label(&self) -> &str;

    /// True when every call is instantaneous and priced in virtual ticks.
    fn is_simulated(&self) -> bool;

    fn prefill_cost(&self) -> Ticks {
        0
    }

    /// One reasoning step continuing `context`.
    fn generate_step(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError>;

    /// The target's own next step; must stay cancellable for early termination.
    fn generate_update(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        let mut done = self.generate_step(context, cancel)?;
        done.value.source = crate::transcript::StepSource::TargetGenerated;
        Ok(done)
    }

    fn score_candidate(
        &self,
        prompt: &str,
        cancel: &CancellationToken,
    ) -> Result<Completion<TokenDistribution>, BackendError>;
}

/// Configuration form of a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Simulated(SimulatedSpec),
    Http(HttpSpec),
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), crate::config::ConfigError> {
        match self {
            BackendSpec::Simulated(s) => s.validate(),
            BackendSpec::Http(h) => h.validate(),
        }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self, BackendSpec::Simulated(_))
    }

    /// Instantiates the backend. `seed_salt` is mixed into simulated seeds so a
    /// global `--seed` changes every stream; `max_response_tokens` caps steps.
    pub fn build(
        &self,
        seed_salt: u64,
        max_response_tokens: u32,
    ) -> Result<Arc<dyn Backend>, crate::config::ConfigError> {
        self.validate()?;
        Ok(match self {
            BackendSpec::Simulated(s) => Arc::new(SimulatedBackend::new(s.clone(), seed_salt, max_response_tokens)),
            BackendSpec::Http(h) => Arc::new(HttpBackend::new(
                h.clone(),
                Arc::new(UreqTransport::new(Duration::from_millis(h.timeout_ms))),
                max_response_tokens,
            )),
        })
    }
}

/// Sleeps out `completion.cost` ticks of `tick` each, checking `cancel` once
/// per tick. This is how simulated latencies play out on a wall clock.
pub fn pace<T>(completion: Completion<T>, tick: Duration, cancel: &CancellationToken) -> Result<T, BackendError> {
    for _ in 0..completion.cost {
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        std::thread::sleep(tick);
    }
    if cancel.is_cancelled() {
        return Err(BackendError::Cancelled);
    }
    Ok(completion.value)
}

const REASONING_PREAMBLE: &str = "You are a reasoning agent responsible for generating a single coherent reasoning step toward solving the given problem.";

/// System and user messages asking a model for exactly one further step.
pub fn reasoning_messages(context: &Transcript) -> (String, String) {
    let system = format!(
        "{REASONING_PREAMBLE}\n\n\
         Instructions:\n\
         - Produce exactly one reasoning step.\n\
         - The step must logically follow from all previous steps.\n\
         - Do not generate the final answer unless explicitly required.\n\n\
         Output Format:\n<reasoning_step>"
    );
    let mut user = format!("Problem:\n{}\n", context.problem());
    if !context.is_empty() {
        user.push_str("\nPrevious steps:\n");
        for (i, step) in context.steps().iter().enumerate() {
            user.push_str(&format!("Step {}: {}\n", i + 1, step.text));
        }
    }
    (system, user)
}
