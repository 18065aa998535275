//! Reward shaping and policy optimization for drafters.
//!
//! A trajectory earns `w1·outcome + w2·alignment − w3·length_penalty`.
//! Rewards are normalized within a sampled group and pushed through a
//! clipped probability-ratio surrogate.
//!
//! ```
//! use stepspec::sapo::{composite_reward, RewardWeights, TrajectoryOutcome};
//!
//! let o = TrajectoryOutcome { correct: true, n_accepted: 4, n_rounds: 4, length_tokens: 900 };
//! let r = composite_reward(&o, &RewardWeights::default()).unwrap();
//! assert_eq!(r.total, 2.0);
//! ```

mod policy;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use policy::ToyPolicy;
pub use train::{policy_stats, toy_train, PolicyStats, SimulatedSpecEnv, Template, TrainConfig, TrainReport};

pub const DEFAULT_LENGTH_SLOPE: f64 = 0.001;
pub const DEFAULT_LENGTH_THRESHOLD: u64 = 4096;
pub const DEFAULT_DELTA: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SapoError {
    #[error("trajectory has no draft rounds")]
    ZeroRounds,
    #[error("{accepted} accepted rounds out of {rounds}")]
    InvalidOutcome { accepted: u32, rounds: u32 },
    #[error("group of {0} is too small; need at least 2")]
    GroupTooSmall(usize),
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("probability ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("clip range must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("policies have different shapes")]
    ShapeMismatch,
    #[error("old policy gives action {action} at round {round} zero probability")]
    ZeroOldProbability { round: usize, action: usize },
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
    #[error("invalid environment: {0}")]
    InvalidEnv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Penalty per token over the threshold.
    pub k: f64,
    /// Length threshold in tokens.
    pub c: u64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            k: DEFAULT_LENGTH_SLOPE,
            c: DEFAULT_LENGTH_THRESHOLD,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), SapoError> {
        let bad = |m: &str| Err(SapoError::InvalidWeights(m.to_owned()));
        if [self.w1, self.w2, self.w3].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and non-negative");
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("k must be positive");
        }
        if self.c == 0 {
            return bad("c must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub correct: bool,
    pub n_accepted: u32,
    /// All rounds in which a draft was proposed.
    pub n_rounds: u32,
    pub length_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub outcome: f64,
    pub draft: f64,
    pub length: f64,
    pub total: f64,
}

pub fn outcome_reward(o: &TrajectoryOutcome) -> f64 {
    if o.correct {
        1.0
    } else {
        0.0
    }
}

pub fn draft_alignment_reward(o: &TrajectoryOutcome) -> Result<f64, SapoError> {
    if o.n_rounds == 0 {
        return Err(SapoError::ZeroRounds);
    }
    if o.n_accepted > o.n_rounds {
        return Err(SapoError::InvalidOutcome {
            accepted: o.n_accepted,
            rounds: o.n_rounds,
        });
    }
    Ok(f64::from(o.n_accepted) / f64::from(o.n_rounds))
}

pub fn length_penalty(length: u64, k: f64, c: u64) -> f64 {
    if length <= c {
        0.0
    } else {
        (k * (length - c) as f64).min(1.0)
    }
}

pub fn composite_reward(o: &TrajectoryOutcome, w: &RewardWeights) -> Result<RewardBreakdown, SapoError> {
    w.validate()?;
    let outcome = outcome_reward(o);
    let draft = draft_alignment_reward(o)?;
    let length = length_penalty(o.length_tokens, w.k, w.c);
    Ok(RewardBreakdown {
        outcome,
        draft,
        length,
        total: w.w1 * outcome + w.w2 * draft - w.w3 * length,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub rewards: Vec<f64>,
    pub baseline: f64,
    pub sigma: f64,
    pub delta: f64,
    pub advantages: Vec<f64>,
}

/// Mean-centred rewards scaled by the population standard deviation.
pub fn group_advantages(rewards: &[f64], delta: f64) -> Result<GroupBatch, SapoError> {
    if rewards.len() < 2 {
        return Err(SapoError::GroupTooSmall(rewards.len()));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(SapoError::InvalidDelta(delta));
    }
    let n = rewards.len() as f64;
    let baseline = rewards.iter().sum::<f64>() / n;
    let raw: Vec<f64> = rewards.iter().map(|r| r - baseline).collect();
    let sigma = (raw.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    Ok(GroupBatch {
        rewards: rewards.to_vec(),
        baseline,
        sigma,
        delta,
        advantages: raw.iter().map(|a| a / (sigma + delta)).collect(),
    })
}

/// `min(u·Ã, clip(u, 1−ε, 1+ε)·Ã)`.
pub fn clipped_objective(u: f64, a_tilde: f64, epsilon: f64) -> Result<f64, SapoError> {
    if u.is_nan() || u <= 0.0 {
        return Err(SapoError::NonPositiveRatio(u));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SapoError::InvalidEpsilon(epsilon));
    }
    Ok((u * a_tilde).min(u.clamp(1.0 - epsilon, 1.0 + epsilon) * a_tilde))
}

/// Derivative of [`clipped_objective`] with respect to `u`; zero where the
/// clipped branch is active and flat.
pub(crate) fn clipped_objective_du(u: f64, a_tilde: f64, epsilon: f64) -> f64 {
    let clipped = u.clamp(1.0 - epsilon, 1.0 + epsilon);
    if u * a_tilde <= clipped * a_tilde || clipped == u {
        a_tilde
    } else {
        0.0
    }
}
