//! Machine-readable output documents and a checker for them.
//!
//! Every file the command-line tool writes has a type here. Checking a file
//! means parsing it strictly into that type: unknown or missing fields fail.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latsim::{Interval, QualitySampler, Scenario, SweepRow};
use crate::orchestrator::EpisodeSummary;
use crate::sapo::TrainReport;
use crate::trace::TraceEvent;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Invalid { path: String, line: usize, message: String },
    #[error("{0}: no schema for this file name")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRow {
    pub problem_index: usize,
    pub policy: String,
    pub summary: EpisodeSummary,
    /// Pure-target makespan over this episode's makespan.
    pub speedup: Option<f64>,
    pub answer: Option<String>,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyTotals {
    pub episodes: usize,
    pub draft_steps: u64,
    pub target_steps: u64,
    pub mean_acceptance_rate: Option<f64>,
    pub total_makespan: u64,
    /// Total pure-target makespan over this policy's total.
    pub speedup: Option<f64>,
}

/// `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub seed: u64,
    pub clock: String,
    pub episodes: Vec<EpisodeRow>,
    pub totals: BTreeMap<String, PolicyTotals>,
}

/// `simulate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateReport {
    pub scenario: Scenario,
    pub makespans: BTreeMap<String, u64>,
    /// Baseline makespan over each policy's makespan.
    pub speedups: BTreeMap<String, f64>,
}

/// `sweep.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub scenario: Scenario,
    pub sampler: QualitySampler,
    pub episodes: u32,
    pub rows: Vec<SweepRow>,
}

fn parse<T: DeserializeOwned>(path: &str, line: usize, text: &str) -> Result<T, SchemaError> {
    serde_json::from_str(text).map_err(|e| SchemaError::Invalid {
        path: path.to_owned(),
        line,
        message: e.to_string(),
    })
}

/// Checks `text` against the schema implied by `file_name`.
pub fn check_str(file_name: &str, text: &str) -> Result<(), SchemaError> {
    let base = Path::new(file_name)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(file_name);
    match base {
        "summary.json" => parse::<RunSummary>(file_name, 1, text).map(drop),
        "simulate.json" => parse::<SimulateReport>(file_name, 1, text).map(drop),
        "sweep.json" => parse::<SweepReport>(file_name, 1, text).map(drop),
        "train_report.json" => parse::<TrainReport>(file_name, 1, text).map(drop),
        "scenario.json" => parse::<Scenario>(file_name, 1, text).map(drop),
        "intervals.json" => parse::<Vec<Interval>>(file_name, 1, text).map(drop),
        b if b.ends_with(".jsonl") => {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                parse::<TraceEvent>(file_name, i + 1, line)?;
            }
            Ok(())
        }
        _ => Err(SchemaError::Unknown(file_name.to_owned())),
    }
}

pub fn check_file(path: &Path) -> Result<(), SchemaError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: name.clone(),
        source,
    })?;
    check_str(&name, &text)
}

/// Checks every recognised file under `dir`, recursively. Returns how many were checked.
pub fn check_dir(dir: &Path) -> Result<usize, SchemaError> {
    let mut checked = 0;
    let entries = std::fs::read_dir(dir).map_err(|source| SchemaError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|source| SchemaError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .path();
        if path.is_dir() {
            checked += check_dir(&path)?;
        } else {
            match check_file(&path) {
                Ok(()) => checked += 1,
                Err(SchemaError::Unknown(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_lines_are_checked_individually() {
        let good = r#"{"ts":0,"actor":"Manager","kind":"Commit","round":0,"payload":{}}"#;
        assert!(check_str("e.jsonl", &format!("{good}\n{good}\n")).is_ok());
        let err = check_str("e.jsonl", &format!("{good}\n{{\"ts\":1}}\n")).unwrap_err();
        assert!(matches!(err, SchemaError::Invalid { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_fields_fail() {
        let err = check_str("simulate.json", r#"{"makespans":{},"speedups":{},"extra":1}"#);
        assert!(matches!(err, Err(SchemaError::Invalid { .. })));
        assert!(matches!(check_str("notes.txt", ""), Err(SchemaError::Unknown(_))));
    }
}
