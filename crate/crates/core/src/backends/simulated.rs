//! Seeded, deterministic stand-in for a model.
//!
//! Every output is a pure function of `(seed, request)`: the step text, its
//! latency, and the scoring noise all come from hashing the seed together with
//! the context. Draft steps carry their scripted quality in a `[q=...]` tag
//! that a simulated verifier reads back from the scoring prompt.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CancellationToken, Completion, TokenDistribution};
use crate::config::ConfigError;
use crate::trace::Ticks;
use crate::transcript::{ReasoningStep, StepSource, Transcript, WhitespaceTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Constant(Ticks),
    /// Inclusive range.
    Uniform(Ticks, Ticks),
}

impl Latency {
    pub fn sample(self, draw: u64) -> Ticks {
        match self {
            Latency::Constant(t) => t,
            Latency::Uniform(lo, hi) => lo + draw % (hi - lo + 1),
        }
    }

    fn validate(self) -> Result<(), ConfigError> {
        match self {
            Latency::Uniform(lo, hi) if lo > hi => Err(ConfigError::Invalid(format!(
                "uniform latency range {lo}..={hi} is empty"
            ))),
            _ => Ok(()),
        }
    }
}

/// Acceptance propensity of drafted steps, by round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quality {
    Constant(f64),
    /// Rounds past the end reuse the last value.
    PerRound(Vec<f64>),
}

impl Quality {
    pub fn at(&self, round: u32) -> f64 {
        match self {
            Quality::Constant(q) => *q,
            Quality::PerRound(qs) => qs.get(round as usize).or(qs.last()).copied().unwrap_or(1.0),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let ok = |q: f64| (0.0..=1.0).contains(&q);
        let valid = match self {
            Quality::Constant(q) => ok(*q),
            Quality::PerRound(qs) => !qs.is_empty() && qs.iter().all(|q| ok(*q)),
        };
        if valid {
            Ok(())
        } else {
            Err(ConfigError::Invalid("quality values must lie in [0,1]".into()))
        }
    }
}

fn default_score_latency() -> Latency {
    Latency::Constant(1)
}

fn default_name() -> String {
    "sim".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub step_latency: Latency,
    #[serde(default = "default_score_latency")]
    pub score_latency: Latency,
    #[serde(default)]
    pub prefill: Ticks,
    pub quality: Quality,
    /// Per-step uniform perturbation of the scripted quality, keyed on context.
    #[serde(default)]
    pub quality_jitter: f64,
    /// Uniform scoring noise amplitude added when this backend verifies.
    #[serde(default)]
    pub noise: f64,
    /// Round whose step states the final answer.
    #[serde(default)]
    pub answer_round: Option<u32>,
    /// Probability that a generation call fails as unavailable.
    #[serde(default)]
    pub failure_rate: f64,
    #[serde(default = "default_words")]
    pub words_per_step: u32,
}

fn default_words() -> u32 {
    12
}

impl SimulatedSpec {
    pub fn new(name: &str, seed: u64, step_latency: Latency, quality: Quality) -> Self {
        Self {
            name: name.to_owned(),
            seed,
            step_latency,
            score_latency: default_score_latency(),
            prefill: 0,
            quality,
            quality_jitter: 0.0,
            noise: 0.0,
            answer_round: None,
            failure_rate: 0.0,
            words_per_step: default_words(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.step_latency.validate()?;
        self.score_latency.validate()?;
        self.quality.validate()?;
        for (name, v) in [
            ("quality_jitter", self.quality_jitter),
            ("noise", self.noise),
            ("failure_rate", self.failure_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.words_per_step == 0 {
            return Err(ConfigError::NonPositive("words_per_step"));
        }
        Ok(())
    }
}

const VERBS: [&str; 8] = [
    "expand",
    "isolate",
    "substitute",
    "simplify",
    "compare",
    "factor",
    "bound",
    "rewrite",
];
const NOUNS: [&str; 8] = [
    "expression",
    "constraint",
    "ratio",
    "term",
    "equation",
    "diagram",
    "quantity",
    "identity",
];

/// Stable 64-bit digest of a seed and a sequence of byte strings.
pub(crate) fn digest(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

fn context_bytes(context: &Transcript) -> Vec<u8> {
    let mut bytes = context.problem().as_bytes().to_vec();
    for s in context.steps() {
        bytes.push(0);
        bytes.extend_from_slice(s.text.as_bytes());
    }
    bytes
}

/// Maps a draw to [-1, 1].
fn signed_unit(draw: u64) -> f64 {
    (draw >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn unit(draw: u64) -> f64 {
    (draw >> 11) as f64 / (1u64 << 53) as f64
}

pub struct SimulatedBackend {
    spec: SimulatedSpec,
    seed: u64,
    max_response_tokens: u32,
}

impl SimulatedBackend {
    pub fn new(spec: SimulatedSpec, seed_salt: u64, max_response_tokens: u32) -> Self {
        let seed = digest(spec.seed, &[&seed_salt.to_le_bytes()]);
        Self {
            spec,
            seed,
            max_response_tokens,
        }
    }

    pub fn spec(&self) -> &SimulatedSpec {
        &self.spec
    }

    fn draw(&self, label: &str, context: &[u8], round: u32) -> u64 {
        digest(self.seed, &[label.as_bytes(), context, &round.to_le_bytes()])
    }

    fn compose(&self, context: &Transcript, source: StepSource) -> Result<Completion<ReasoningStep>, BackendError> {
        let round = context.next_round();
        let ctx = context_bytes(context);
        let latency = self.spec.step_latency.sample(self.draw("latency", &ctx, round));
        if self.spec.failure_rate > 0.0 && unit(self.draw("fail", &ctx, round)) < self.spec.failure_rate {
            return Err(BackendError::unavailable(format!(
                "{} failed at round {round}",
                self.spec.name
            )));
        }
        let pick = self.draw("text", &ctx, round);
        let text = if self.spec.answer_round.is_some_and(|r| round >= r) {
            format!("Therefore the result follows.\nFinal Answer: {}", pick % 1000)
        } else {
            let q = (self.spec.quality.at(round)
                + self.spec.quality_jitter * signed_unit(self.draw("jitter", &ctx, round)))
            .clamp(0.0, 1.0);
            let verb = VERBS[(pick % 8) as usize];
            let noun = NOUNS[((pick >> 8) % 8) as usize];
            let mut words = vec![
                format!("{}:", self.spec.name),
                verb.to_owned(),
                "the".into(),
                noun.to_owned(),
            ];
            let filler = ["and", "carry", "the", "result", "forward"];
            let mut i = 0;
            while (words.len() as u32) < self.spec.words_per_step.saturating_sub(1) {
                words.push(filler[i % filler.len()].to_owned());
                i += 1;
            }
            words.push(format!("v{round}={} [q={q:.4}]", (pick >> 16) % 100));
            words.join(" ")
        };
        let step = ReasoningStep::new(round, text, source, &WhitespaceTokenizer)?;
        if step.token_count > u64::from(self.max_response_tokens) {
            let kept: Vec<&str> = step
                .text
                .split_whitespace()
                .take(self.max_response_tokens as usize)
                .collect();
            let partial = ReasoningStep::new(round, kept.join(" "), source, &WhitespaceTokenizer)?;
            return Err(BackendError::ResponseTooLong {
                partial: Box::new(partial),
            });
        }
        Ok(Completion {
            value: step,
            cost: latency,
        })
    }

    fn generate(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
        source: StepSource,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        if context.is_sealed() {
            return Err(crate::transcript::TranscriptError::SealedTranscript.into());
        }
        self.compose(context, source)
    }
}

/// Reads the `[q=...]` tag of a simulated draft step.
pub(crate) fn quality_tag(text: &str) -> Option<f64> {
    let start = text.rfind("[q=")? + 3;
    let end = text[start..].find(']')? + start;
    text[start..end].parse().ok()
}

impl Backend for SimulatedBackend {
    fn label(&self) -> &str {
        &self.spec.name
    }

    fn is_simulated(&self) -> bool {
        true
    }

    fn prefill_cost(&self) -> Ticks {
        self.spec.prefill
    }

    fn generate_step(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        self.generate(context, cancel, StepSource::DraftAccepted)
    }

    fn generate_update(
        &self,
        context: &Transcript,
        cancel: &CancellationToken,
    ) -> Result<Completion<ReasoningStep>, BackendError> {
        self.generate(context, cancel, StepSource::TargetGenerated)
    }

    /// `{"positive": q, "negative": 1 - q}` where `q` is the candidate's tagged
    /// quality (1.0 when untagged) plus seeded noise, clamped to [0, 1].
    fn score_candidate(
        &self,
        prompt: &str,
        cancel: &CancellationToken,
    ) -> Result<Completion<TokenDistribution>, BackendError> {
        if cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        let candidate = crate::cpn::candidate_from_prompt(prompt).unwrap_or(prompt);
        let base = quality_tag(candidate).unwrap_or(1.0);
        let draw = self.draw("score", prompt.as_bytes(), 0);
        let q = (base + self.spec.noise * signed_unit(draw)).clamp(0.0, 1.0);
        let cost = self
            .spec
            .score_latency
            .sample(self.draw("score-latency", prompt.as_bytes(), 0));
        let dist = TokenDistribution::new([("positive".to_owned(), q), ("negative".to_owned(), 1.0 - q)])?;
        Ok(Completion { value: dist, cost })
    }
}
