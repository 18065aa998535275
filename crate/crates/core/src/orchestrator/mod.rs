//! Step-level speculative execution.
//!
//! Four scheduling policies share one [`Manager`]:
//!
//! * `Baseline`: the target generates every step.
//! * `SequentialSpec`: draft, verify, then commit or fall back to the target;
//!   nothing overlaps. This is the semantic reference.
//! * `OverlapOnly`: the target generates the frontier step while the draft is
//!   produced and verified, and is stopped early on acceptance; no drafting past
//!   the frontier.
//! * `Fpsr`: the fully parallel schedule. The drafter keeps proposing steps on
//!   top of the optimistic prefix inside a bounded lookahead window, the target
//!   works on the frontier step, verification runs as soon as the frontier draft
//!   exists. Acceptance early-terminates the target; rejection cancels and
//!   discards all speculative descendants, waits for the target's step, and
//!   commits it in place of the draft.
//!
//! Whatever the timing, every policy that drafts commits the same transcript
//! given deterministic backends.

mod checks;
mod manager;
mod runner;
mod threaded;
mod virtual_clock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checks::{
    check_cancels, check_device_exclusivity, check_ordered_commits, check_rollback_completeness, check_safety,
    check_window_bound, TraceViolation,
};
pub use manager::{Command, Manager, SpeculationState, Task, TaskId, TaskKind, TaskOutput, TaskResult};
pub use runner::{BackendRunner, TaskRunner};
pub use threaded::run_threaded;
pub use virtual_clock::{run_virtual, VerifyMode};

use crate::backends::{Backend, BackendError};
use crate::config::{ConfigError, EngineConfig};
use crate::cpn::{KeywordSpec, Verdict};
use crate::trace::{Ticks, TraceEvent};
use crate::transcript::{StepSource, Transcript, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Baseline,
    SequentialSpec,
    OverlapOnly,
    Fpsr,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::Baseline,
        Policy::SequentialSpec,
        Policy::OverlapOnly,
        Policy::Fpsr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Baseline => "baseline",
            Policy::SequentialSpec => "sequential_spec",
            Policy::OverlapOnly => "overlap_only",
            Policy::Fpsr => "fpsr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("episode aborted: {cause}")]
    Aborted {
        cause: BackendError,
        trace: Vec<TraceEvent>,
    },
    #[error("episode exceeded its wall-clock deadline")]
    DeadlineExceeded { trace: Vec<TraceEvent> },
    #[error("virtual clock needs simulated backends; {0} is live")]
    VirtualClockUnsupported(String),
    #[error("internal protocol error: {0}")]
    Protocol(String),
}

impl EngineError {
    /// Events recorded before the failure, when there are any.
    pub fn partial_trace(&self) -> Option<&[TraceEvent]> {
        match self {
            EngineError::Aborted { trace, .. } | EngineError::DeadlineExceeded { trace } => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub source: StepSource,
    /// Absent when no draft reached verification for this round.
    pub verdict: Option<Verdict>,
    /// Commit time.
    pub wall_time: Ticks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub policy: Policy,
    pub transcript: Transcript,
    pub rounds: Vec<RoundRecord>,
    /// Completed draft proposals, including speculative ones later discarded.
    pub proposals: u32,
    pub accepted: u32,
    pub verified: u32,
    /// accepted / proposals; `None` when the policy never drafts.
    pub acceptance_rate: Option<f64>,
    /// accepted / verified rounds.
    pub acceptance_rate_committed: Option<f64>,
    pub makespan: Ticks,
    pub trace: Vec<TraceEvent>,
}

impl EpisodeResult {
    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            accepted_rounds: self.accepted,
            total_proposals: self.proposals,
            acceptance_rate: self.acceptance_rate,
            acceptance_rate_committed: self.acceptance_rate_committed,
            makespan: self.makespan,
            source_per_round: self
                .rounds
                .iter()
                .map(|r| manager::source_tag(r.source).to_owned())
                .collect(),
        }
    }
}

/// Per-episode machine-readable summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub accepted_rounds: u32,
    pub total_proposals: u32,
    pub acceptance_rate: Option<f64>,
    pub acceptance_rate_committed: Option<f64>,
    pub makespan: Ticks,
    pub source_per_round: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    /// Discrete-event time in ticks; only simulated backends.
    Virtual(VerifyMode),
    /// Real time in nanoseconds; simulated latencies are slept out at `tick` per unit.
    Wall { tick: Duration },
}

/// Runs episodes for one draft/target pair.
pub struct Engine {
    draft: Option<Arc<dyn Backend>>,
    target: Arc<dyn Backend>,
    cfg: EngineConfig,
    keywords: KeywordSpec,
    clock: Clock,
}

impl Engine {
    pub fn new(draft: Option<Arc<dyn Backend>>, target: Arc<dyn Backend>, cfg: EngineConfig) -> Self {
        let all_simulated = target.is_simulated() && draft.as_ref().is_none_or(|d| d.is_simulated());
        let clock = if all_simulated {
            Clock::Virtual(VerifyMode::Preempt)
        } else {
            Clock::Wall {
                tick: Duration::from_millis(1),
            }
        };
        Self {
            draft,
            target,
            cfg,
            keywords: KeywordSpec::default(),
            clock,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_keywords(mut self, keywords: KeywordSpec) -> Self {
        self.keywords = keywords;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn run(&self, policy: Policy, problem: &str) -> Result<EpisodeResult, EngineError> {
        self.keywords
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let draft = if policy == Policy::Baseline {
            None
        } else {
            self.draft.clone()
        };
        let runner = BackendRunner::new(draft, self.target.clone(), self.keywords.clone(), self.cfg.alpha);
        let manager = Manager::new(policy, self.cfg.clone(), problem)?;
        match self.clock {
            Clock::Virtual(mode) => {
                if !runner.is_simulated() {
                    return Err(EngineError::VirtualClockUnsupported(runner.live_label()));
                }
                run_virtual(manager, &runner, mode)
            }
            Clock::Wall { tick } => {
                let deadline = self.cfg.deadline_ms.map(Duration::from_millis);
                run_threaded(manager, Arc::new(runner), tick, deadline)
            }
        }
    }

    pub fn run_fpsr(&self, problem: &str) -> Result<EpisodeResult, EngineError> {
        self.run(Policy::Fpsr, problem)
    }

    /// Strictly sequential draft, verify, commit-or-fallback.
    pub fn run_reference(&self, problem: &str) -> Result<EpisodeResult, EngineError> {
        self.run(Policy::SequentialSpec, problem)
    }

    pub fn run_pure_target(&self, problem: &str) -> Result<EpisodeResult, EngineError> {
        self.run(Policy::Baseline, problem)
    }
}

pub fn run_fpsr(
    problem: &str,
    draft: Arc<dyn Backend>,
    target: Arc<dyn Backend>,
    cfg: &EngineConfig,
) -> Result<EpisodeResult, EngineError> {
    Engine::new(Some(draft), target, cfg.clone()).run_fpsr(problem)
}

pub fn run_reference(
    problem: &str,
    draft: Arc<dyn Backend>,
    target: Arc<dyn Backend>,
    cfg: &EngineConfig,
) -> Result<EpisodeResult, EngineError> {
    Engine::new(Some(draft), target, cfg.clone()).run_reference(problem)
}

pub fn run_pure_target(
    problem: &str,
    target: Arc<dyn Backend>,
    cfg: &EngineConfig,
) -> Result<EpisodeResult, EngineError> {
    Engine::new(None, target, cfg.clone()).run_pure_target(problem)
}
