//! Discrete-event execution on a virtual clock.
//!
//! Two devices: the draft device runs drafting, the target device runs
//! prefill, the frontier update, and verification. In [`VerifyMode::Preempt`]
//! a verification pauses a running update for its duration and the update
//! later resumes without losing progress. Simultaneous completions are
//! delivered in actor order (drafter, target, verifier), then in issue order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::manager::{Command, Manager, Task, TaskId, TaskKind, TaskResult};
use super::runner::TaskRunner;
use super::{EngineError, EpisodeResult};
use crate::backends::CancellationToken;
use crate::trace::Ticks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Verification pauses the target's update.
    #[default]
    Preempt,
    /// Verification runs alongside the update.
    Parallel,
}

struct Live {
    kind: TaskKind,
    result: Option<TaskResult>,
    remaining: Ticks,
    resumed_at: Ticks,
    paused: bool,
    /// Bumped whenever the scheduled completion moves; stale heap entries are skipped.
    generation: u64,
}

type Key = Reverse<(Ticks, u8, u64, TaskId, u64)>;

struct Executor<'r, R: TaskRunner + ?Sized> {
    runner: &'r R,
    mode: VerifyMode,
    now: Ticks,
    seq: u64,
    live: BTreeMap<TaskId, Live>,
    queue: BinaryHeap<Key>,
    never: CancellationToken,
}

impl<'r, R: TaskRunner + ?Sized> Executor<'r, R> {
    fn schedule(&mut self, id: TaskId) {
        let live = self.live.get_mut(&id).expect("scheduling a live task");
        live.generation += 1;
        live.resumed_at = self.now;
        let at = self.now + live.remaining;
        let rank = live.kind_actor_rank();
        self.seq += 1;
        self.queue.push(Reverse((at, rank, self.seq, id, live.generation)));
    }

    fn running_update(&self) -> Option<TaskId> {
        self.live
            .iter()
            .find(|(_, l)| l.kind == TaskKind::Update)
            .map(|(id, _)| *id)
    }

    fn verify_running(&self) -> bool {
        self.live.values().any(|l| l.kind == TaskKind::Verify)
    }

    fn pause_update(&mut self) {
        let now = self.now;
        if let Some(id) = self.running_update() {
            let live = self.live.get_mut(&id).expect("present");
            if !live.paused {
                let progressed = now - live.resumed_at;
                live.remaining = live.remaining.saturating_sub(progressed);
                if live.remaining > 0 {
                    live.paused = true;
                    live.generation += 1;
                } else {
                    live.resumed_at = now;
                }
            }
        }
    }

    fn resume_update(&mut self) {
        if let Some(id) = self.running_update() {
            if self.live[&id].paused {
                self.live.get_mut(&id).expect("present").paused = false;
                self.schedule(id);
            }
        }
    }

    fn start(&mut self, task: Task) {
        let (result, cost) = self.runner.run(&task, &self.never);
        let preempt = self.mode == VerifyMode::Preempt;
        if preempt && task.kind == TaskKind::Verify {
            self.pause_update();
        }
        let paused = preempt && task.kind == TaskKind::Update && self.verify_running();
        self.live.insert(
            task.id,
            Live {
                kind: task.kind,
                result: Some(result),
                remaining: cost,
                resumed_at: self.now,
                paused,
                generation: 0,
            },
        );
        if !paused {
            self.schedule(task.id);
        }
    }

    fn cancel(&mut self, id: TaskId) {
        if let Some(live) = self.live.remove(&id) {
            if live.kind == TaskKind::Verify && self.mode == VerifyMode::Preempt {
                self.resume_update();
            }
        }
    }

    fn apply(&mut self, commands: Vec<Command>) {
        for cmd in commands {
            match cmd {
                Command::Start(task) => self.start(task),
                Command::Cancel(id) => self.cancel(id),
            }
        }
    }

    /// Next due completion, skipping stale entries.
    fn pop(&mut self) -> Option<(Ticks, TaskId, TaskResult)> {
        while let Some(Reverse((at, _, _, id, generation))) = self.queue.pop() {
            let Some(live) = self.live.get(&id) else {
                continue;
            };
            if live.generation != generation || live.paused {
                continue;
            }
            let mut live = self.live.remove(&id).expect("present");
            self.now = at;
            if live.kind == TaskKind::Verify && self.mode == VerifyMode::Preempt {
                self.resume_update();
            }
            return Some((at, id, live.result.take().expect("result taken once")));
        }
        None
    }
}

impl Live {
    fn kind_actor_rank(&self) -> u8 {
        self.kind.actor().rank()
    }
}

/// Drives `manager` to completion on a virtual clock.
pub fn run_virtual<R: TaskRunner + ?Sized>(
    mut manager: Manager,
    runner: &R,
    mode: VerifyMode,
) -> Result<EpisodeResult, EngineError> {
    let mut exec = Executor {
        runner,
        mode,
        now: 0,
        seq: 0,
        live: BTreeMap::new(),
        queue: BinaryHeap::new(),
        never: CancellationToken::new(),
    };
    let first = manager.begin_and_pump(0);
    exec.apply(first);
    while !manager.is_finished() {
        let Some((now, id, result)) = exec.pop() else {
            return Err(EngineError::Protocol(format!(
                "virtual clock stalled at t={} with state {:?}",
                exec.now,
                manager.state()
            )));
        };
        let commands = manager.on_complete(now, id, result)?;
        exec.apply(commands);
    }
    Ok(manager.into_result())
}
