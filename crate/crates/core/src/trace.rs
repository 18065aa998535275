//! Episode event traces and their JSON Lines encoding.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

/// Time in integer ticks (virtual clock) or nanoseconds (wall clock).
pub type Ticks = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Actor {
    Drafter,
    Target,
    Verifier,
    Manager,
    Corrector,
}

impl Actor {
    /// Tie-break order for simultaneous events.
    pub fn rank(self) -> u8 {
        match self {
            Actor::Drafter => 0,
            Actor::Target => 1,
            Actor::Corrector => 2,
            Actor::Verifier => 3,
            Actor::Manager => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TaskStart,
    TaskEnd,
    Commit,
    Reject,
    Rollback,
    Cancel,
    EarlyTerminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub ts: Ticks,
    pub actor: Actor,
    pub kind: EventKind,
    /// Reasoning round, or -1 for episode-level work such as prefill.
    pub round: i64,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn new(ts: Ticks, actor: Actor, kind: EventKind, round: i64) -> Self {
        Self {
            ts,
            actor,
            kind,
            round,
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.payload.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, events: &[TraceEvent]) -> io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(events: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, events).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(io::Error::other)?;
        events.push(event);
    }
    Ok(events)
}

/// Same events with every timestamp zeroed, for comparing wall-clock runs.
pub fn strip_timestamps(events: &[TraceEvent]) -> Vec<TraceEvent> {
    events
        .iter()
        .cloned()
        .map(|mut e| {
            e.ts = 0;
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_names() {
        let e = TraceEvent::new(6, Actor::Manager, EventKind::Commit, 0).with("source", "draft");
        let line = to_jsonl(std::slice::from_ref(&e));
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["actor", "kind", "payload", "round", "ts"]);
        assert_eq!(obj["ts"], 6);
        assert_eq!(obj["actor"], "Manager");
        assert_eq!(obj["kind"], "Commit");
        let back = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(back, vec![e]);
    }
}
