//! Reasoning steps and the committed transcript they form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counts tokens in a piece of generated text.
///
/// The engine never needs a model tokenizer to run; callers that have one can
/// plug it in here so length accounting matches the model's view.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// Default tokenizer: one token per whitespace-delimited unit.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

/// Who produced a committed step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepSource {
    DraftAccepted,
    TargetGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub round_index: u32,
    pub text: String,
    pub source: StepSource,
    pub token_count: u64,
}

impl ReasoningStep {
    /// Builds a step, counting tokens with `tokenizer`. Blank text is rejected.
    pub fn new(
        round_index: u32,
        text: impl Into<String>,
        source: StepSource,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self, TranscriptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TranscriptError::EmptyStep);
        }
        let token_count = tokenizer.count(&text);
        Ok(Self {
            round_index,
            text,
            source,
            token_count,
        })
    }

    /// Same content, different provenance. Used when a draft is committed.
    pub fn with_source(mut self, source: StepSource) -> Self {
        self.source = source;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("problem statement is empty")]
    EmptyProblem,
    #[error("reasoning step text is empty")]
    EmptyStep,
    #[error("round gap: expected round {expected}, got {got}")]
    RoundGap { expected: u32, got: u32 },
    #[error("transcript is sealed; no further steps may be appended")]
    SealedTranscript,
}

/// The verified reasoning prefix for one problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    problem: String,
    steps: Vec<ReasoningStep>,
    final_answer: Option<String>,
    answer_tokens: u64,
    total_tokens: u64,
}

impl Transcript {
    pub fn new(problem: impl Into<String>) -> Result<Self, TranscriptError> {
        let problem = problem.into();
        if problem.trim().is_empty() {
            return Err(TranscriptError::EmptyProblem);
        }
        Ok(Self {
            problem,
            steps: Vec::new(),
            final_answer: None,
            answer_tokens: 0,
            total_tokens: 0,
        })
    }

    pub fn problem(&self) -> &str {
        &self.problem
    }

    pub fn steps(&self) -> &[ReasoningStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Round index the next appended step must carry.
    pub fn next_round(&self) -> u32 {
        self.steps.len() as u32
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.final_answer.as_deref()
    }

    pub fn is_sealed(&self) -> bool {
        self.final_answer.is_some()
    }

    /// Reasoning plus answer tokens.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn answer_tokens(&self) -> u64 {
        self.answer_tokens
    }

    pub fn append_step(&self, step: ReasoningStep) -> Result<Self, TranscriptError> {
        let mut next = self.clone();
        next.push(step)?;
        Ok(next)
    }

    /// In-place variant of [`append_step`](Self::append_step) for the single-writer commit path.
    pub fn push(&mut self, step: ReasoningStep) -> Result<(), TranscriptError> {
        if self.is_sealed() {
            return Err(TranscriptError::SealedTranscript);
        }
        if step.round_index != self.next_round() {
            return Err(TranscriptError::RoundGap {
                expected: self.next_round(),
                got: step.round_index,
            });
        }
        self.total_tokens += step.token_count;
        self.steps.push(step);
        Ok(())
    }

    /// Records the final answer. `answer_tokens` counts only tokens not already
    /// present in a committed step.
    pub fn seal(&mut self, answer: impl Into<String>, answer_tokens: u64) -> Result<(), TranscriptError> {
        if self.is_sealed() {
            return Err(TranscriptError::SealedTranscript);
        }
        self.final_answer = Some(answer.into());
        self.answer_tokens = answer_tokens;
        self.total_tokens += answer_tokens;
        Ok(())
    }

    /// Step texts joined by newlines; the byte form compared across runners.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&step.text);
            out.push('\n');
        }
        if let Some(answer) = &self.final_answer {
            out.push_str("=> ");
            out.push_str(answer);
            out.push('\n');
        }
        out
    }
}

/// Finds a line starting with `marker` and returns the trimmed text after it.
pub fn extract_final_answer<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .map(str::trim_start)
        .find_map(|line| line.strip_prefix(marker))
        .map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(round: u32, tokens: usize) -> ReasoningStep {
        let text = vec!["w"; tokens].join(" ");
        ReasoningStep::new(round, text, StepSource::TargetGenerated, &WhitespaceTokenizer).unwrap()
    }

    #[test]
    fn new_transcript_is_empty() {
        let t = Transcript::new("solve x+1=2").unwrap();
        assert!(t.steps().is_empty());
        assert_eq!(t.total_tokens(), 0);
        assert_eq!(t.final_answer(), None);
    }

    #[test]
    fn blank_problem_rejected() {
        assert_eq!(Transcript::new(""), Err(TranscriptError::EmptyProblem));
        assert_eq!(Transcript::new("  \n"), Err(TranscriptError::EmptyProblem));
    }

    #[test]
    fn single_append_counts_tokens() {
        let t = Transcript::new("p").unwrap().append_step(step(0, 12)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.total_tokens(), 12);
    }

    #[test]
    fn round_gap_rejected() {
        let t = Transcript::new("p")
            .unwrap()
            .append_step(step(0, 1))
            .unwrap()
            .append_step(step(1, 1))
            .unwrap();
        assert_eq!(
            t.append_step(step(3, 1)),
            Err(TranscriptError::RoundGap { expected: 2, got: 3 })
        );
    }

    #[test]
    fn four_appends_sum() {
        let mut t = Transcript::new("p").unwrap();
        let mut expected = 0;
        for r in 0..4 {
            t = t.append_step(step(r, 500)).unwrap();
            expected += 500;
        }
        assert_eq!(t.total_tokens(), expected);
        assert_eq!(t.total_tokens(), 2000);
    }

    #[test]
    fn sealed_transcript_refuses_steps() {
        let mut t = Transcript::new("p").unwrap();
        t.push(step(0, 3)).unwrap();
        t.seal("4", 1).unwrap();
        assert_eq!(t.total_tokens(), 4);
        assert_eq!(t.append_step(step(1, 1)), Err(TranscriptError::SealedTranscript));
    }

    #[test]
    fn empty_step_rejected() {
        let err = ReasoningStep::new(0, "   ", StepSource::DraftAccepted, &WhitespaceTokenizer);
        assert_eq!(err, Err(TranscriptError::EmptyStep));
    }

    #[test]
    fn final_answer_marker() {
        let text = "so x = 1.\nFinal Answer: 1";
        assert_eq!(extract_final_answer(text, "Final Answer:"), Some("1"));
        assert_eq!(extract_final_answer("no answer here", "Final Answer:"), None);
    }
}
