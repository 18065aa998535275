//! The single writer of episode state.
//!
//! The manager never runs model calls itself. Executors report task
//! completions; the manager answers with commands (start this task, cancel
//! that one) and appends every state change to the trace. Results for tasks
//! that are no longer tracked are dropped by id, so a late completion from a
//! cancelled task can never be committed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EngineError, EpisodeResult, Policy, RoundRecord};
use crate::backends::BackendError;
use crate::config::EngineConfig;
use crate::cpn::Verdict;
use crate::trace::{Actor, EventKind, Ticks, TraceEvent};
use crate::transcript::{extract_final_answer, ReasoningStep, StepSource, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    PrefillDraft,
    PrefillTarget,
    Draft,
    Verify,
    Update,
}

impl TaskKind {
    pub fn actor(self) -> Actor {
        match self {
            TaskKind::PrefillDraft | TaskKind::Draft => Actor::Drafter,
            TaskKind::PrefillTarget | TaskKind::Update => Actor::Target,
            TaskKind::Verify => Actor::Verifier,
        }
    }

    pub fn op(self) -> &'static str {
        match self {
            TaskKind::PrefillDraft | TaskKind::PrefillTarget => "prefill",
            TaskKind::Draft => "draft",
            TaskKind::Verify => "verify",
            TaskKind::Update => "update",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub round: u32,
    /// Prefix the task conditions on: the optimistic prefix for drafts, the
    /// committed prefix for verification and updates.
    pub context: Transcript,
    pub candidate: Option<ReasoningStep>,
}

impl Task {
    fn event_round(&self) -> i64 {
        match self.kind {
            TaskKind::PrefillDraft | TaskKind::PrefillTarget => -1,
            _ => i64::from(self.round),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TaskOutput {
    Prefilled,
    Step(ReasoningStep),
    Verdict(Verdict),
}

pub type TaskResult = Result<TaskOutput, BackendError>;

#[derive(Debug, Clone)]
pub enum Command {
    Start(Task),
    Cancel(TaskId),
}

#[derive(Debug, Clone)]
enum Slot {
    Running,
    Ready(ReasoningStep, TaskId),
    Failed,
}

#[derive(Debug, Clone)]
struct UpdateState {
    round: u32,
    task: TaskId,
    result: Option<ReasoningStep>,
}

#[derive(Debug, Clone)]
struct Running {
    kind: TaskKind,
    round: i64,
}

/// Observable state of the speculation pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpeculationState {
    pub committed_rounds: u32,
    /// Uncommitted speculative rounds, drafted or being drafted.
    pub inflight: Vec<u32>,
    pub window: u32,
    pub can_draft: bool,
}

pub struct Manager {
    policy: Policy,
    cfg: EngineConfig,
    window: u32,
    committed: Transcript,
    slots: BTreeMap<u32, Slot>,
    drafting: Option<TaskId>,
    update: Option<UpdateState>,
    verifying: Option<(u32, TaskId)>,
    awaiting_correction: Option<u32>,
    pending_verdicts: BTreeMap<u32, Verdict>,
    draft_ready: bool,
    target_ready: bool,
    running: BTreeMap<TaskId, Running>,
    next_id: u64,
    finished: bool,
    finished_at: Ticks,
    records: Vec<RoundRecord>,
    proposals: u32,
    accepted: u32,
    verified: u32,
    trace: Vec<TraceEvent>,
}

impl Manager {
    pub fn new(policy: Policy, cfg: EngineConfig, problem: &str) -> Result<Self, EngineError> {
        cfg.validate()?;
        let window = match policy {
            Policy::Fpsr => cfg.lookahead_window,
            _ => 1,
        };
        Ok(Self {
            policy,
            window,
            committed: Transcript::new(problem)?,
            cfg,
            slots: BTreeMap::new(),
            drafting: None,
            update: None,
            verifying: None,
            awaiting_correction: None,
            pending_verdicts: BTreeMap::new(),
            draft_ready: false,
            target_ready: false,
            running: BTreeMap::new(),
            next_id: 0,
            finished: false,
            finished_at: 0,
            records: Vec::new(),
            proposals: 0,
            accepted: 0,
            verified: 0,
            trace: Vec::new(),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn committed(&self) -> &Transcript {
        &self.committed
    }

    pub fn state(&self) -> SpeculationState {
        SpeculationState {
            committed_rounds: self.frontier(),
            inflight: self.slots.keys().copied().collect(),
            window: self.window,
            can_draft: self.can_draft(),
        }
    }

    fn uses_draft(&self) -> bool {
        self.policy != Policy::Baseline
    }

    fn frontier(&self) -> u32 {
        self.committed.next_round()
    }

    fn is_terminal(&self, step: &ReasoningStep) -> bool {
        extract_final_answer(&step.text, &self.cfg.terminal_marker).is_some()
    }

    fn can_draft(&self) -> bool {
        if self.finished || !self.uses_draft() || self.awaiting_correction.is_some() {
            return false;
        }
        if self.slots.len() as u32 >= self.window {
            return false;
        }
        let next = self.frontier() + self.slots.len() as u32;
        if next >= self.cfg.max_rounds {
            return false;
        }
        // The optimistic prefix must be fully drafted and not already final.
        match self.slots.values().next_back() {
            None => true,
            Some(Slot::Ready(step, _)) => !self.is_terminal(step),
            Some(_) => false,
        }
    }

    fn optimistic_prefix(&self) -> Transcript {
        let mut prefix = self.committed.clone();
        for slot in self.slots.values() {
            if let Slot::Ready(step, _) = slot {
                prefix
                    .push(step.clone())
                    .expect("speculative slots are contiguous from the frontier");
            }
        }
        prefix
    }

    fn emit(&mut self, event: TraceEvent) {
        self.trace.push(event);
    }

    fn start(
        &mut self,
        now: Ticks,
        kind: TaskKind,
        round: u32,
        context: Transcript,
        candidate: Option<ReasoningStep>,
    ) -> Command {
        let id = TaskId(self.next_id);
        self.next_id += 1;
        let task = Task {
            id,
            kind,
            round,
            context,
            candidate,
        };
        let event_round = task.event_round();
        self.running.insert(
            id,
            Running {
                kind,
                round: event_round,
            },
        );
        self.emit(
            TraceEvent::new(now, kind.actor(), EventKind::TaskStart, event_round)
                .with("task", id.0)
                .with("op", kind.op()),
        );
        Command::Start(task)
    }

    fn cancel(&mut self, now: Ticks, id: TaskId, reason: &str, out: &mut Vec<Command>) {
        if let Some(r) = self.running.remove(&id) {
            self.emit(
                TraceEvent::new(now, r.kind.actor(), EventKind::Cancel, r.round)
                    .with("task", id.0)
                    .with("op", r.kind.op())
                    .with("reason", reason),
            );
            out.push(Command::Cancel(id));
        }
    }

    /// Commands that open the episode.
    pub fn begin(&mut self, now: Ticks) -> Vec<Command> {
        let problem = self.committed.clone();
        let mut out = vec![self.start(now, TaskKind::PrefillTarget, 0, problem.clone(), None)];
        if self.uses_draft() {
            out.push(self.start(now, TaskKind::PrefillDraft, 0, problem, None));
        }
        out
    }

    /// Starts whatever the current state allows: drafting first, then the
    /// target update, then verification.
    fn pump(&mut self, now: Ticks, out: &mut Vec<Command>) {
        if self.finished {
            return;
        }
        if self.draft_ready && self.drafting.is_none() && self.can_draft() {
            let round = self.frontier() + self.slots.len() as u32;
            let prefix = self.optimistic_prefix();
            let cmd = self.start(now, TaskKind::Draft, round, prefix, None);
            if let Command::Start(t) = &cmd {
                self.drafting = Some(t.id);
                self.slots.insert(round, Slot::Running);
            }
            out.push(cmd);
        }
        let f = self.frontier();
        let wants_update = match self.policy {
            Policy::Baseline | Policy::OverlapOnly | Policy::Fpsr => true,
            Policy::SequentialSpec => self.awaiting_correction == Some(f),
        };
        if self.target_ready && self.update.is_none() && f < self.cfg.max_rounds && wants_update {
            let cmd = self.start(now, TaskKind::Update, f, self.committed.clone(), None);
            if let Command::Start(t) = &cmd {
                self.update = Some(UpdateState {
                    round: f,
                    task: t.id,
                    result: None,
                });
            }
            out.push(cmd);
        }
        if self.target_ready && self.verifying.is_none() && self.awaiting_correction.is_none() {
            if let Some(Slot::Ready(step, _)) = self.slots.get(&f) {
                let candidate = step.clone();
                let cmd = self.start(now, TaskKind::Verify, f, self.committed.clone(), Some(candidate));
                if let Command::Start(t) = &cmd {
                    self.verifying = Some((f, t.id));
                }
                out.push(cmd);
            }
        }
    }

    pub fn begin_and_pump(&mut self, now: Ticks) -> Vec<Command> {
        let mut out = self.begin(now);
        self.pump(now, &mut out);
        out
    }

    /// Feeds one completion. Completions of tasks that were cancelled or never
    /// issued are ignored.
    pub fn on_complete(&mut self, now: Ticks, id: TaskId, result: TaskResult) -> Result<Vec<Command>, EngineError> {
        let mut out = Vec::new();
        let Some(running) = self.running.remove(&id) else {
            return Ok(out);
        };
        if self.finished {
            return Ok(out);
        }
        let mut end = TraceEvent::new(now, running.kind.actor(), EventKind::TaskEnd, running.round)
            .with("task", id.0)
            .with("op", running.kind.op());
        let round = running.round as u32;
        match (running.kind, result) {
            (TaskKind::PrefillDraft, _) => {
                self.emit(end);
                self.draft_ready = true;
            }
            (TaskKind::PrefillTarget, _) => {
                self.emit(end);
                self.target_ready = true;
            }
            (TaskKind::Draft, result) => {
                self.drafting = None;
                let step = match result {
                    Ok(TaskOutput::Step(step)) => Some(step),
                    Err(BackendError::ResponseTooLong { partial }) => {
                        end = end.with("truncated", true);
                        Some(*partial)
                    }
                    Ok(other) => return Err(EngineError::Protocol(format!("draft produced {other:?}"))),
                    Err(e) => {
                        end = end.with("error", e);
                        None
                    }
                };
                self.emit(end);
                match step {
                    Some(step) => {
                        self.proposals += 1;
                        self.slots.insert(round, Slot::Ready(step, id));
                    }
                    None => {
                        self.slots.insert(round, Slot::Failed);
                        if round == self.frontier() {
                            self.awaiting_correction = Some(round);
                        }
                    }
                }
            }
            (TaskKind::Verify, result) => {
                self.verifying = None;
                let verdict = match result {
                    Ok(TaskOutput::Verdict(v)) => v,
                    Ok(other) => return Err(EngineError::Protocol(format!("verify produced {other:?}"))),
                    Err(e) => {
                        self.emit(end.with("error", &e));
                        return Err(self.abort(now, e));
                    }
                };
                self.verified += 1;
                self.emit(
                    end.with("rho", format!("{:.6}", verdict.rho))
                        .with("accepted", verdict.accepted),
                );
                self.on_verdict(now, round, verdict, &mut out);
            }
            (TaskKind::Update, result) => {
                let step = match result {
                    Ok(TaskOutput::Step(step)) => step,
                    Err(BackendError::ResponseTooLong { partial }) => {
                        end = end.with("truncated", true);
                        *partial
                    }
                    Ok(other) => return Err(EngineError::Protocol(format!("update produced {other:?}"))),
                    Err(e) => {
                        self.emit(end.with("error", &e));
                        self.update = None;
                        return Err(self.abort(now, e));
                    }
                };
                self.emit(end);
                if self.policy == Policy::Baseline || self.awaiting_correction == Some(round) {
                    self.update = None;
                    self.commit(now, step.with_source(StepSource::TargetGenerated), None, id, &mut out);
                } else if let Some(u) = self.update.as_mut() {
                    u.result = Some(step);
                }
            }
        }
        self.pump(now, &mut out);
        Ok(out)
    }

    fn on_verdict(&mut self, now: Ticks, round: u32, verdict: Verdict, out: &mut Vec<Command>) {
        if verdict.accepted {
            self.accepted += 1;
            let (step, draft_task) = match self.slots.remove(&round) {
                Some(Slot::Ready(step, task)) => (step, task),
                other => unreachable!("verified round {round} has slot {other:?}"),
            };
            if let Some(u) = self.update.take() {
                if self.running.contains_key(&u.task) {
                    self.emit(
                        TraceEvent::new(now, Actor::Target, EventKind::EarlyTerminate, i64::from(u.round))
                            .with("task", u.task.0),
                    );
                    self.cancel(now, u.task, "early_terminate", out);
                }
            }
            self.commit(
                now,
                step.with_source(StepSource::DraftAccepted),
                Some(verdict),
                draft_task,
                out,
            );
        } else {
            self.emit(
                TraceEvent::new(now, Actor::Manager, EventKind::Reject, i64::from(round))
                    .with("rho", format!("{:.6}", verdict.rho)),
            );
            if let Some(id) = self.drafting.take() {
                self.cancel(now, id, "rollback", out);
            }
            let discarded: Vec<u32> = self.slots.keys().copied().filter(|r| *r > round).collect();
            self.slots.clear();
            self.emit(
                TraceEvent::new(now, Actor::Manager, EventKind::Rollback, i64::from(round))
                    .with("to", self.frontier())
                    .with("discarded", join_rounds(&discarded)),
            );
            self.awaiting_correction = Some(round);
            self.pending_verdicts.insert(round, verdict);
            if let Some(u) = self.update.as_mut() {
                if let Some(step) = u.result.take() {
                    let task = u.task;
                    self.update = None;
                    self.commit(
                        now,
                        step.with_source(StepSource::TargetGenerated),
                        Some(verdict),
                        task,
                        out,
                    );
                }
            }
        }
    }

    fn commit(
        &mut self,
        now: Ticks,
        step: ReasoningStep,
        verdict: Option<Verdict>,
        task: TaskId,
        out: &mut Vec<Command>,
    ) {
        let round = self.frontier();
        let verdict = verdict.or_else(|| self.pending_verdicts.remove(&round));
        self.pending_verdicts.remove(&round);
        let source = step.source;
        let terminal = extract_final_answer(&step.text, &self.cfg.terminal_marker).map(str::to_owned);
        self.committed
            .push(ReasoningStep {
                round_index: round,
                ..step
            })
            .expect("commits follow the frontier");
        self.slots.remove(&round);
        if self.update.as_ref().is_some_and(|u| u.round == round) {
            // An update that finished before its round was accepted.
            self.update = None;
        }
        self.awaiting_correction = None;
        self.records.push(RoundRecord {
            round,
            source,
            verdict,
            wall_time: now,
        });
        self.emit(
            TraceEvent::new(now, Actor::Manager, EventKind::Commit, i64::from(round))
                .with("source", source_tag(source))
                .with("task", task.0),
        );
        let next = self.frontier();
        if let Some(answer) = terminal {
            self.committed.seal(answer, 0).expect("sealed once");
            self.finish(now, out);
        } else if next >= self.cfg.max_rounds {
            self.finish(now, out);
        } else if matches!(self.slots.get(&next), Some(Slot::Failed)) {
            self.awaiting_correction = Some(next);
        }
    }

    fn finish(&mut self, now: Ticks, out: &mut Vec<Command>) {
        self.finished = true;
        self.finished_at = now;
        let ids: Vec<TaskId> = self.running.keys().copied().collect();
        for id in ids {
            self.cancel(now, id, "finished", out);
        }
        self.slots.clear();
        self.drafting = None;
        self.update = None;
        self.verifying = None;
    }

    /// Cancels everything still running and wraps the error with the partial trace.
    pub fn abort(&mut self, now: Ticks, cause: BackendError) -> EngineError {
        let mut ignored = Vec::new();
        let ids: Vec<TaskId> = self.running.keys().copied().collect();
        for id in ids {
            self.cancel(now, id, "aborted", &mut ignored);
        }
        EngineError::Aborted {
            cause,
            trace: self.trace.clone(),
        }
    }

    /// Cancels all running work after a deadline.
    pub fn expire(&mut self, now: Ticks) -> (Vec<TaskId>, EngineError) {
        let mut cmds = Vec::new();
        let ids: Vec<TaskId> = self.running.keys().copied().collect();
        for id in ids {
            self.cancel(now, id, "deadline", &mut cmds);
        }
        let cancelled = cmds
            .into_iter()
            .filter_map(|c| match c {
                Command::Cancel(id) => Some(id),
                Command::Start(_) => None,
            })
            .collect();
        (
            cancelled,
            EngineError::DeadlineExceeded {
                trace: self.trace.clone(),
            },
        )
    }

    pub fn into_result(self) -> EpisodeResult {
        let acceptance_rate = self.uses_draft().then(|| ratio(self.accepted, self.proposals));
        let acceptance_rate_committed = self.uses_draft().then(|| ratio(self.accepted, self.verified));
        EpisodeResult {
            policy: self.policy,
            transcript: self.committed,
            rounds: self.records,
            proposals: self.proposals,
            accepted: self.accepted,
            verified: self.verified,
            acceptance_rate,
            acceptance_rate_committed,
            makespan: self.finished_at,
            trace: self.trace,
        }
    }
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        f64::from(num) / f64::from(den)
    }
}

pub(crate) fn source_tag(source: StepSource) -> &'static str {
    match source {
        StepSource::DraftAccepted => "draft",
        StepSource::TargetGenerated => "target",
    }
}

fn join_rounds(rounds: &[u32]) -> String {
    rounds.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

/// Parses the `discarded` payload of a rollback event.
pub(crate) fn split_rounds(list: &str) -> BTreeSet<i64> {
    list.split(',').filter_map(|s| s.trim().parse().ok()).collect()
}
