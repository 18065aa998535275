//! Replay checkers for episode traces.
//!
//! Each checker re-derives a scheduling invariant from the event stream alone,
//! so it applies equally to live runs, virtual runs, and traces loaded from
//! disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::manager::split_rounds;
use super::{EpisodeResult, Policy};
use crate::trace::{EventKind, TraceEvent};
use crate::transcript::StepSource;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceViolation {
    /// Index of the offending event.
    pub index: usize,
    pub message: String,
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: {}", self.index, self.message)
    }
}

impl std::error::Error for TraceViolation {}

fn violation(index: usize, message: impl Into<String>) -> TraceViolation {
    TraceViolation {
        index,
        message: message.into(),
    }
}

fn task_of(e: &TraceEvent) -> Option<u64> {
    e.get("task").and_then(|t| t.parse().ok())
}

/// Commit rounds are 0, 1, 2, ... in trace order.
pub fn check_ordered_commits(trace: &[TraceEvent]) -> Result<(), TraceViolation> {
    let mut expected = 0i64;
    for (i, e) in trace.iter().enumerate() {
        if e.kind == EventKind::Commit {
            if e.round != expected {
                return Err(violation(
                    i,
                    format!("commit of round {} where {expected} was next", e.round),
                ));
            }
            expected += 1;
        }
    }
    Ok(())
}

/// Every cancel names a task that started and has neither ended nor been
/// cancelled already. Timestamps never decrease.
pub fn check_cancels(trace: &[TraceEvent]) -> Result<(), TraceViolation> {
    let mut open = BTreeSet::new();
    let mut last_ts = 0;
    for (i, e) in trace.iter().enumerate() {
        if e.ts < last_ts {
            return Err(violation(i, "timestamp went backwards"));
        }
        last_ts = e.ts;
        match e.kind {
            EventKind::TaskStart => {
                let id = task_of(e).ok_or_else(|| violation(i, "task start without id"))?;
                if !open.insert(id) {
                    return Err(violation(i, format!("task {id} started twice")));
                }
            }
            EventKind::TaskEnd | EventKind::Cancel => {
                let id = task_of(e).ok_or_else(|| violation(i, "task event without id"))?;
                if !open.remove(&id) {
                    return Err(violation(i, format!("{:?} for task {id} that is not running", e.kind)));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Replays speculative slots and checks at most `window` are open at once.
///
/// A slot opens when a draft starts for a round and closes when that round
/// commits, is rejected, or is discarded by a rollback or cancellation.
pub fn check_window_bound(trace: &[TraceEvent], window: u32) -> Result<(), TraceViolation> {
    let mut open = BTreeSet::new();
    let mut draft_rounds = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        match e.kind {
            EventKind::TaskStart if e.get("op") == Some("draft") => {
                open.insert(e.round);
                if let Some(id) = task_of(e) {
                    draft_rounds.insert(id, e.round);
                }
            }
            EventKind::Cancel if e.get("op") == Some("draft") => {
                if let Some(round) = task_of(e).and_then(|id| draft_rounds.get(&id)) {
                    open.remove(round);
                }
            }
            EventKind::Commit | EventKind::Reject => {
                open.remove(&e.round);
            }
            EventKind::Rollback => {
                for r in split_rounds(e.get("discarded").unwrap_or_default()) {
                    open.remove(&r);
                }
            }
            _ => {}
        }
        if open.len() as u32 > window {
            return Err(violation(
                i,
                format!("{} speculative rounds open, window is {window}", open.len()),
            ));
        }
    }
    Ok(())
}

/// After a rejection at round r, nothing started before it for a later round
/// may be committed.
pub fn check_rollback_completeness(trace: &[TraceEvent]) -> Result<(), TraceViolation> {
    let mut started: BTreeMap<u64, (usize, i64)> = BTreeMap::new();
    let mut rejects: Vec<(usize, i64)> = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        match e.kind {
            EventKind::TaskStart => {
                if let Some(id) = task_of(e) {
                    started.insert(id, (i, e.round));
                }
            }
            EventKind::Reject => rejects.push((i, e.round)),
            EventKind::Commit => {
                let id = task_of(e).ok_or_else(|| violation(i, "commit without producing task"))?;
                let &(start_idx, task_round) = started
                    .get(&id)
                    .ok_or_else(|| violation(i, format!("commit of unknown task {id}")))?;
                if let Some((ri, rr)) = rejects
                    .iter()
                    .find(|(ri, rr)| *ri > start_idx && *ri < i && task_round > *rr)
                {
                    return Err(violation(
                        i,
                        format!("task {id} for round {task_round} started before reject of round {rr} (event {ri}) yet committed"),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// No committed step carries a rejected verdict; every target-generated step
/// follows a rejection or a failed draft of its round (or the policy never drafts).
pub fn check_safety(result: &EpisodeResult) -> Result<(), TraceViolation> {
    let trace = &result.trace;
    for (i, record) in result.rounds.iter().enumerate() {
        match record.source {
            StepSource::DraftAccepted => {
                if !record.verdict.is_some_and(|v| v.accepted) {
                    return Err(violation(
                        i,
                        format!("round {} committed a draft without an accepting verdict", record.round),
                    ));
                }
            }
            StepSource::TargetGenerated => {
                if result.policy == Policy::Baseline {
                    continue;
                }
                let round = i64::from(record.round);
                let justified = trace.iter().any(|e| {
                    e.round == round
                        && (e.kind == EventKind::Reject
                            || (e.kind == EventKind::TaskEnd
                                && e.get("op") == Some("draft")
                                && e.get("error").is_some()))
                });
                if !justified {
                    return Err(violation(
                        i,
                        format!("round {} fell back to the target without a rejection", record.round),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Device occupancy: the draft device runs one task at a time; on the target
/// device only a verification may overlap an update.
pub fn check_device_exclusivity(trace: &[TraceEvent]) -> Result<(), TraceViolation> {
    use crate::trace::Actor;
    let mut running: BTreeMap<u64, (&str, bool)> = BTreeMap::new();
    for (i, e) in trace.iter().enumerate() {
        match e.kind {
            EventKind::TaskStart => {
                let id = task_of(e).ok_or_else(|| violation(i, "task start without id"))?;
                let op = e.get("op").unwrap_or("?");
                let on_draft = e.actor == Actor::Drafter;
                let clash = running.values().find(|(other, other_draft)| {
                    *other_draft == on_draft && !(matches!((op, *other), ("verify", "update") | ("update", "verify")))
                });
                if let Some((other, _)) = clash {
                    return Err(violation(
                        i,
                        format!("{op} overlaps running {other} on the same device"),
                    ));
                }
                running.insert(id, (op, on_draft));
            }
            EventKind::TaskEnd | EventKind::Cancel => {
                if let Some(id) = task_of(e) {
                    running.remove(&id);
                }
            }
            _ => {}
        }
    }
    Ok(())
}
