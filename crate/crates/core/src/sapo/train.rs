use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use super::{
    composite_reward, group_advantages, RewardWeights, SapoError, TrajectoryOutcome, DEFAULT_DELTA, DEFAULT_EPSILON,
};
use crate::config::DEFAULT_ALPHA;
use crate::cpn;

/// A candidate step shape with a fixed verifier ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub rho: f64,
    /// Whether the step is actually correct.
    pub sound: bool,
    pub tokens: u64,
}

/// Drafting environment: each round the policy picks a template, the
/// verifier accepts it iff its ratio clears α, and a rejected round is
/// replaced by a target step of `fallback_tokens`. The answer is correct iff
/// every accepted step is sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSpecEnv {
    pub templates: Vec<Template>,
    pub rounds: usize,
    pub fallback_tokens: u64,
    pub alpha: f64,
}

impl Default for SimulatedSpecEnv {
    /// Three templates: long and verified, short and rejected, short but
    /// accepted and wrong.
    fn default() -> Self {
        let t = |name: &str, rho, sound, tokens| Template {
            name: name.to_owned(),
            rho,
            sound,
            tokens,
        };
        Self {
            templates: vec![
                t("thorough", 0.9, true, 1100),
                t("terse", 0.4, true, 300),
                t("plausible", 0.8, false, 400),
            ],
            rounds: 4,
            fallback_tokens: 900,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl SimulatedSpecEnv {
    pub fn validate(&self) -> Result<(), SapoError> {
        let bad = |m: &str| Err(SapoError::InvalidEnv(m.to_owned()));
        if self.templates.is_empty() {
            return bad("no templates");
        }
        if self.rounds == 0 {
            return Err(SapoError::ZeroRounds);
        }
        if self.templates.iter().any(|t| !(0.0..=1.0).contains(&t.rho)) {
            return bad("template ratios must lie in [0,1]");
        }
        Ok(())
    }

    pub fn outcome(&self, actions: &[usize]) -> TrajectoryOutcome {
        let mut o = TrajectoryOutcome {
            correct: true,
            n_accepted: 0,
            n_rounds: actions.len() as u32,
            length_tokens: 0,
        };
        for &a in actions {
            let t = &self.templates[a];
            if cpn::decide(t.rho, self.alpha).accepted {
                o.n_accepted += 1;
                o.length_tokens += t.tokens;
                o.correct &= t.sound;
            } else {
                o.length_tokens += self.fallback_tokens;
            }
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub group_size: usize,
    /// Gradient steps per sampled group; the old policy is frozen for all of them.
    pub inner_steps: u32,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            group_size: 16,
            inner_steps: 4,
            learning_rate: 1e-2,
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_DELTA,
            seed: 0,
        }
    }
}

/// Exact expectations under a policy, by enumerating every action sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub expected_reward: f64,
    pub expected_acceptance: f64,
    pub expected_length: f64,
    pub modal_actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: u32,
    pub weights: RewardWeights,
    pub seed: u64,
    /// Per-epoch means over the sampled group.
    pub mean_reward: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    pub mean_length: Vec<f64>,
    pub initial: PolicyStats,
    #[serde(rename = "final")]
    pub final_stats: PolicyStats,
    pub policy: ToyPolicy,
}

const MAX_ENUMERATION: usize = 1 << 20;

pub fn policy_stats(policy: &ToyPolicy, env: &SimulatedSpecEnv, w: &RewardWeights) -> Result<PolicyStats, SapoError> {
    let k = env.templates.len();
    let count = k
        .checked_pow(env.rounds as u32)
        .filter(|c| *c <= MAX_ENUMERATION)
        .ok_or_else(|| SapoError::InvalidEnv("too many action sequences to enumerate".into()))?;
    let probs: Vec<Vec<f64>> = (0..env.rounds).map(|r| policy.probs(r)).collect();
    let mut stats = PolicyStats {
        expected_reward: 0.0,
        expected_acceptance: 0.0,
        expected_length: 0.0,
        modal_actions: policy.modal_actions(),
    };
    let mut actions = vec![0; env.rounds];
    for mut code in 0..count {
        let mut p = 1.0;
        for (r, a) in actions.iter_mut().enumerate() {
            *a = code % k;
            code /= k;
            p *= probs[r][*a];
        }
        let o = env.outcome(&actions);
        let reward = composite_reward(&o, w)?;
        stats.expected_reward += p * reward.total;
        stats.expected_acceptance += p * reward.draft;
        stats.expected_length += p * o.length_tokens as f64;
    }
    Ok(stats)
}

/// Group-relative clipped policy optimization of a uniform [`ToyPolicy`].
pub fn toy_train(env: &SimulatedSpecEnv, w: &RewardWeights, cfg: &TrainConfig) -> Result<TrainReport, SapoError> {
    env.validate()?;
    w.validate()?;
    if cfg.group_size < 2 {
        return Err(SapoError::GroupTooSmall(cfg.group_size));
    }
    let mut policy = ToyPolicy::uniform(env.rounds, env.templates.len());
    policy.epsilon = cfg.epsilon;
    let initial = policy_stats(&policy, env, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        epochs: cfg.epochs,
        weights: *w,
        seed: cfg.seed,
        mean_reward: Vec::new(),
        acceptance_rate: Vec::new(),
        mean_length: Vec::new(),
        initial: initial.clone(),
        final_stats: initial,
        policy: policy.clone(),
    };

    for _ in 0..cfg.epochs {
        let old = policy.clone();
        let samplers: Vec<WeightedIndex<f64>> = (0..env.rounds)
            .map(|r| WeightedIndex::new(old.probs(r)).expect("softmax weights are positive"))
            .collect();
        let mut group = Vec::with_capacity(cfg.group_size);
        let mut rewards = Vec::with_capacity(cfg.group_size);
        let (mut acc, mut len) = (0.0, 0.0);
        for _ in 0..cfg.group_size {
            let actions: Vec<usize> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
            let o = env.outcome(&actions);
            let r = composite_reward(&o, w)?;
            rewards.push(r.total);
            acc += r.draft;
            len += o.length_tokens as f64;
            group.push(actions);
        }
        let batch = group_advantages(&rewards, cfg.delta)?;
        let samples: Vec<(Vec<usize>, f64)> = group.into_iter().zip(batch.advantages).collect();
        for _ in 0..cfg.inner_steps {
            let grad = policy.surrogate_grad(&old, &samples)?;
            let theta: Vec<f64> = policy
                .params()
                .iter()
                .zip(&grad)
                .map(|(t, g)| t + cfg.learning_rate * g)
                .collect();
            policy.set_params(&theta);
        }
        let n = cfg.group_size as f64;
        report.mean_reward.push(batch.baseline);
        report.acceptance_rate.push(acc / n);
        report.mean_length.push(len / n);
    }

    report.final_stats = policy_stats(&policy, env, w)?;
    report.policy = policy;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_outcomes() {
        let env = SimulatedSpecEnv::default();
        let o = env.outcome(&[0, 0, 0, 0]);
        assert_eq!((o.correct, o.n_accepted, o.length_tokens), (true, 4, 4400));
        let o = env.outcome(&[1, 1, 1, 1]);
        assert_eq!((o.correct, o.n_accepted, o.length_tokens), (true, 0, 3600));
        let o = env.outcome(&[0, 2, 1, 0]);
        assert_eq!((o.correct, o.n_accepted, o.length_tokens), (false, 3, 3500));
    }

    #[test]
    fn zero_epochs_reports_the_initial_policy() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let r = toy_train(&SimulatedSpecEnv::default(), &RewardWeights::default(), &cfg).unwrap();
        assert!(r.mean_reward.is_empty());
        assert_eq!(r.initial, r.final_stats);
    }

    #[test]
    fn stats_of_a_deterministic_policy() {
        let env = SimulatedSpecEnv::default();
        let mut p = ToyPolicy::uniform(4, 3);
        for row in &mut p.logits {
            row[0] = 50.0;
        }
        let s = policy_stats(&p, &env, &RewardWeights::default()).unwrap();
        // All thorough: correct, fully accepted, 4400 tokens.
        assert!((s.expected_reward - (2.0 - 0.304)).abs() < 1e-9);
        assert!((s.expected_length - 4400.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_groups_are_refused() {
        let cfg = TrainConfig {
            group_size: 1,
            ..Default::default()
        };
        assert_eq!(
            toy_train(&SimulatedSpecEnv::default(), &RewardWeights::default(), &cfg).unwrap_err(),
            SapoError::GroupTooSmall(1)
        );
    }
}
