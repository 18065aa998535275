//! Virtual-clock replay of the four scheduling policies.
//!
//! A [`Scenario`] fixes per-task tick costs and which rounds the verifier
//! accepts. [`simulate`] runs the real [`Manager`] against a synthetic task
//! runner on the discrete-event executor, so the timeline obeys exactly the
//! rules the live orchestrator follows.
//!
//! ```
//! use stepspec::latsim::{simulate, speedup, AcceptSchedule, Scenario};
//! use stepspec::Policy;
//!
//! let fpsr = Scenario::hand(AcceptSchedule::Fixed(vec![true, true]), Policy::Fpsr);
//! let base = Scenario { policy: Policy::Baseline, ..fpsr.clone() };
//! let (a, b) = (simulate(&fpsr).unwrap(), simulate(&base).unwrap());
//! assert_eq!((a.makespan, b.makespan), (10, 22));
//! assert_eq!(speedup(&a, &b).unwrap(), 2.2);
//! ```

mod gantt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gantt::{intervals, render_svg, render_text, Interval, Lane};

use crate::backends::CancellationToken;
use crate::config::{EngineConfig, DEFAULT_ALPHA};
use crate::cpn::Verdict;
use crate::orchestrator::{
    run_virtual, Manager, Policy, Task, TaskKind, TaskOutput, TaskResult, TaskRunner, VerifyMode,
};
use crate::trace::{Ticks, TraceEvent};
use crate::transcript::{ReasoningStep, StepSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("cannot compute a speedup against a zero makespan")]
    ZeroMakespan,
}

/// Which rounds the verifier accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptSchedule {
    /// One entry per round.
    Fixed(Vec<bool>),
    Bernoulli {
        p: f64,
        seed: u64,
    },
}

impl AcceptSchedule {
    /// Per-round decisions for `rounds` rounds.
    pub fn realize(&self, rounds: u32) -> Vec<bool> {
        match self {
            AcceptSchedule::Fixed(v) => v.clone(),
            AcceptSchedule::Bernoulli { p, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..rounds).map(|_| rng.random::<f64>() < *p).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rounds: u32,
    pub prefill_target: Ticks,
    pub prefill_draft: Ticks,
    pub draft_step: Ticks,
    pub target_step: Ticks,
    pub verify: Ticks,
    pub accept_schedule: AcceptSchedule,
    pub policy: Policy,
    #[serde(default = "default_window")]
    pub window: u32,
    #[serde(default)]
    pub verify_mode: VerifyMode,
}

fn default_window() -> u32 {
    crate::config::DEFAULT_LOOKAHEAD
}

impl Scenario {
    /// Two rounds with prefill 2/1, draft 4, target 10, verify 1.
    pub fn hand(accept_schedule: AcceptSchedule, policy: Policy) -> Self {
        Self {
            rounds: 2,
            prefill_target: 2,
            prefill_draft: 1,
            draft_step: 4,
            target_step: 10,
            verify: 1,
            accept_schedule,
            policy,
            window: default_window(),
            verify_mode: VerifyMode::Preempt,
        }
    }

    /// Mid-sized scenario whose drafts pass at the rate of a well-aligned
    /// drafter (52.61%). Latency ratios are guesses, so only the order of
    /// magnitude of its speedup is meaningful.
    pub fn calibration(seed: u64) -> Self {
        Self {
            rounds: 40,
            prefill_target: 20,
            prefill_draft: 4,
            draft_step: 8,
            target_step: 64,
            verify: 4,
            accept_schedule: AcceptSchedule::Bernoulli { p: 0.5261, seed },
            policy: Policy::Fpsr,
            window: default_window(),
            verify_mode: VerifyMode::Preempt,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        match &self.accept_schedule {
            AcceptSchedule::Fixed(v) if v.len() != self.rounds as usize => {
                bad(format!("schedule has {} entries for {} rounds", v.len(), self.rounds))
            }
            AcceptSchedule::Bernoulli { p, .. } if !(0.0..=1.0).contains(p) => {
                bad(format!("acceptance probability {p} outside [0,1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self { policy, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<TraceEvent>,
    pub makespan: Ticks,
}

struct ScenarioRunner<'a> {
    scenario: &'a Scenario,
    accepts: Vec<bool>,
}

impl ScenarioRunner<'_> {
    fn step(&self, round: u32, source: StepSource) -> ReasoningStep {
        let who = match source {
            StepSource::DraftAccepted => "draft",
            StepSource::TargetGenerated => "target",
        };
        ReasoningStep {
            round_index: round,
            text: format!("{who} step {round}"),
            source,
            token_count: 3,
        }
    }
}

impl TaskRunner for ScenarioRunner<'_> {
    fn run(&self, task: &Task, _cancel: &CancellationToken) -> (TaskResult, Ticks) {
        let s = self.scenario;
        match task.kind {
            TaskKind::PrefillTarget => (Ok(TaskOutput::Prefilled), s.prefill_target),
            TaskKind::PrefillDraft => (Ok(TaskOutput::Prefilled), s.prefill_draft),
            TaskKind::Draft => (
                Ok(TaskOutput::Step(self.step(task.round, StepSource::DraftAccepted))),
                s.draft_step,
            ),
            TaskKind::Update => (
                Ok(TaskOutput::Step(self.step(task.round, StepSource::TargetGenerated))),
                s.target_step,
            ),
            TaskKind::Verify => {
                let accept = self.accepts.get(task.round as usize).copied().unwrap_or(false);
                let rho = if accept { 1.0 } else { 0.0 };
                (Ok(TaskOutput::Verdict(Verdict::from_rho(rho, DEFAULT_ALPHA))), s.verify)
            }
        }
    }
}

/// Runs one scenario on the virtual clock.
pub fn simulate(s: &Scenario) -> Result<Timeline, SimError> {
    s.validate()?;
    let cfg = EngineConfig {
        lookahead_window: s.window,
        max_rounds: s.rounds,
        ..EngineConfig::default()
    };
    let manager = Manager::new(s.policy, cfg, "scenario").map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let runner = ScenarioRunner {
        scenario: s,
        accepts: s.accept_schedule.realize(s.rounds),
    };
    let result = run_virtual(manager, &runner, s.verify_mode).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    Ok(Timeline {
        events: result.trace,
        makespan: result.makespan,
    })
}

/// `baseline.makespan / variant.makespan`.
pub fn speedup(variant: &Timeline, baseline: &Timeline) -> Result<f64, SimError> {
    if variant.makespan == 0 || baseline.makespan == 0 {
        return Err(SimError::ZeroMakespan);
    }
    Ok(baseline.makespan as f64 / variant.makespan as f64)
}

/// Seeded source of verifier ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QualitySampler {
    Uniform { seed: u64 },
    Beta { a: f64, b: f64, seed: u64 },
}

impl QualitySampler {
    pub fn sample(&self, n: usize) -> Result<Vec<f64>, SimError> {
        match *self {
            QualitySampler::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..n).map(|_| rng.random::<f64>()).collect())
            }
            QualitySampler::Beta { a, b, seed } => {
                let dist = Beta::new(a, b).map_err(|e| SimError::InvalidScenario(format!("beta({a}, {b}): {e}")))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub acceptance: f64,
    pub speedup: f64,
}

/// Acceptance and speedup per threshold over one fixed sample of ratios.
///
/// `episodes × base.rounds` ratios are drawn once; for each α an episode's
/// schedule accepts round r iff its ratio exceeds α. Speedup is total
/// baseline makespan over total makespan of `base.policy`.
pub fn sweep_alpha(
    base: &Scenario,
    alphas: &[f64],
    sampler: &QualitySampler,
    episodes: u32,
) -> Result<Vec<SweepRow>, SimError> {
    base.validate()?;
    let rounds = base.rounds as usize;
    let rhos = sampler.sample(rounds * episodes.max(1) as usize)?;
    let mut baseline_total = 0;
    for chunk in rhos.chunks(rounds) {
        let s = Scenario {
            accept_schedule: AcceptSchedule::Fixed(vec![false; chunk.len()]),
            ..base.with_policy(Policy::Baseline)
        };
        baseline_total += simulate(&s)?.makespan;
    }
    alphas
        .iter()
        .map(|&alpha| {
            let accepted = rhos.iter().filter(|&&rho| rho > alpha).count();
            let mut total = 0;
            for chunk in rhos.chunks(rounds) {
                let s = Scenario {
                    accept_schedule: AcceptSchedule::Fixed(chunk.iter().map(|&rho| rho > alpha).collect()),
                    ..base.clone()
                };
                total += simulate(&s)?.makespan;
            }
            Ok(SweepRow {
                alpha,
                acceptance: accepted as f64 / rhos.len() as f64,
                speedup: if total == 0 {
                    0.0
                } else {
                    baseline_total as f64 / total as f64
                },
            })
        })
        .collect()
}
