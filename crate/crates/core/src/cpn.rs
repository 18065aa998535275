//! Contrastive probability normalization.
//!
//! The target model is asked to answer `positive` or `negative` about a
//! candidate step. Only the relative weight of the two keywords matters:
//!
//! ```text
//! rho = s_pos / (s_pos + s_neg)
//! ```
//!
//! and a step is accepted when `rho` strictly exceeds the threshold `alpha`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::TokenDistribution;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CpnError {
    #[error("no probability mass on either keyword")]
    NoEvidence,
    #[error("candidate step is empty")]
    EmptyCandidate,
    #[error("invalid keyword spec: {0}")]
    InvalidKeywords(String),
}

/// Outcome of verifying one candidate step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub s_pos: f64,
    pub s_neg: f64,
    /// Zero when there was no evidence at all.
    pub rho: f64,
    pub alpha: f64,
    pub accepted: bool,
}

impl Verdict {
    /// Builds the verdict for a pair of keyword probabilities. Missing evidence
    /// is a rejection, never an error.
    pub fn from_probs(s_pos: f64, s_neg: f64, alpha: f64) -> Self {
        let rho = compute_ratio(s_pos, s_neg).unwrap_or(0.0);
        let accepted = s_pos + s_neg > 0.0 && accepts(rho, alpha);
        Self {
            s_pos,
            s_neg,
            rho,
            alpha,
            accepted,
        }
    }

    /// A verdict whose only known quantity is the ratio, as in scheduling
    /// simulations where no distribution exists.
    pub fn from_rho(rho: f64, alpha: f64) -> Self {
        decide(rho, alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordSpec {
    pub positive_forms: BTreeSet<String>,
    pub negative_forms: BTreeSet<String>,
}

impl Default for KeywordSpec {
    fn default() -> Self {
        let forms = |w: &str, cap: &str| {
            [w.to_owned(), format!(" {w}"), cap.to_owned()]
                .into_iter()
                .collect::<BTreeSet<_>>()
        };
        Self {
            positive_forms: forms("positive", "Positive"),
            negative_forms: forms("negative", "Negative"),
        }
    }
}

impl KeywordSpec {
    pub fn validate(&self) -> Result<(), CpnError> {
        if self.positive_forms.is_empty() || self.negative_forms.is_empty() {
            return Err(CpnError::InvalidKeywords("keyword sets must be non-empty".into()));
        }
        if let Some(both) = self.positive_forms.intersection(&self.negative_forms).next() {
            return Err(CpnError::InvalidKeywords(format!(
                "{both:?} is both positive and negative"
            )));
        }
        Ok(())
    }

    fn matches(forms: &BTreeSet<String>, token: &str) -> bool {
        if forms.contains(token) {
            return true;
        }
        let norm = normalize(token);
        !norm.is_empty() && forms.iter().any(|f| normalize(f).starts_with(&norm))
    }
}

fn normalize(token: &str) -> String {
    token.trim_start().to_lowercase()
}

/// Sums the probability mass of every token that names (a prefix of) either
/// keyword, after trimming leading whitespace and lowercasing. A token that
/// would match both sides counts toward neither.
pub fn extract_keyword_probs(dist: &TokenDistribution, spec: &KeywordSpec) -> Result<(f64, f64), CpnError> {
    let mut s_pos = 0.0;
    let mut s_neg = 0.0;
    for (token, &p) in dist.entries() {
        let pos = KeywordSpec::matches(&spec.positive_forms, token);
        let neg = KeywordSpec::matches(&spec.negative_forms, token);
        match (pos, neg) {
            (true, false) => s_pos += p,
            (false, true) => s_neg += p,
            _ => {}
        }
    }
    if s_pos + s_neg > 0.0 {
        Ok((s_pos, s_neg))
    } else {
        Err(CpnError::NoEvidence)
    }
}

pub fn compute_ratio(s_pos: f64, s_neg: f64) -> Result<f64, CpnError> {
    let total = s_pos + s_neg;
    if total > 0.0 {
        Ok(s_pos / total)
    } else {
        Err(CpnError::NoEvidence)
    }
}

/// Strict threshold rule: ties reject.
pub fn accepts(rho: f64, alpha: f64) -> bool {
    rho > alpha
}

pub fn decide(rho: f64, alpha: f64) -> Verdict {
    Verdict {
        s_pos: rho,
        s_neg: 1.0 - rho,
        rho,
        alpha,
        accepted: accepts(rho, alpha),
    }
}

/// Full verification path: keyword extraction, ratio, threshold.
pub fn verify(dist: &TokenDistribution, spec: &KeywordSpec, alpha: f64) -> Verdict {
    match extract_keyword_probs(dist, spec) {
        Ok((s_pos, s_neg)) => Verdict::from_probs(s_pos, s_neg, alpha),
        Err(_) => Verdict::from_probs(0.0, 0.0, alpha),
    }
}

const SCORING_PREAMBLE: &str = "You are a verification agent evaluating the correctness of the final reasoning step.";

/// Prompt asking the target to judge `candidate` given the problem and the
/// already verified steps.
pub fn build_scoring_prompt(
    problem: &str,
    prior_steps: &[impl AsRef<str>],
    candidate: &str,
) -> Result<String, CpnError> {
    if candidate.trim().is_empty() {
        return Err(CpnError::EmptyCandidate);
    }
    let mut prompt = String::with_capacity(512 + problem.len() + candidate.len());
    prompt.push_str(SCORING_PREAMBLE);
    prompt.push_str("\n\n## Problem\n");
    prompt.push_str(problem);
    prompt.push_str("\n\n## Previous Steps\n");
    if prior_steps.is_empty() {
        prompt.push_str("(none)\n");
    }
    for (i, step) in prior_steps.iter().enumerate() {
        prompt.push_str(&format!("Step {}: {}\n", i + 1, step.as_ref()));
    }
    prompt.push_str("\n## Candidate Step\n");
    prompt.push_str(candidate);
    prompt.push_str(
        "\n\n## Decision Rules\n\
         - Reply positive only if the step is factually correct and logically valid.\n\
         - Reply negative otherwise.\n\n\
         ## Output Format\n\
         positive | negative\n",
    );
    Ok(prompt)
}

/// Recovers the candidate section of a prompt built by [`build_scoring_prompt`].
pub fn candidate_from_prompt(prompt: &str) -> Option<&str> {
    let start = prompt.find("\n## Candidate Step\n")? + "\n## Candidate Step\n".len();
    let end = prompt[start..].find("\n\n## Decision Rules")? + start;
    Some(&prompt[start..end])
}
