use std::sync::Arc;

use super::manager::{Task, TaskKind, TaskOutput, TaskResult};
use crate::backends::{Backend, BackendError, CancellationToken};
use crate::cpn::{self, KeywordSpec};
use crate::trace::Ticks;

/// Executes one task and prices it in virtual ticks.
///
/// Executors decide what the ticks mean: the virtual clock schedules the
/// completion that far ahead, the wall clock sleeps them out.
pub trait TaskRunner: Send + Sync {
    fn run(&self, task: &Task, cancel: &CancellationToken) -> (TaskResult, Ticks);
}

/// Runs tasks against a draft and a target backend.
pub struct BackendRunner {
    draft: Option<Arc<dyn Backend>>,
    target: Arc<dyn Backend>,
    keywords: KeywordSpec,
    alpha: f64,
}

impl BackendRunner {
    pub fn new(draft: Option<Arc<dyn Backend>>, target: Arc<dyn Backend>, keywords: KeywordSpec, alpha: f64) -> Self {
        Self {
            draft,
            target,
            keywords,
            alpha,
        }
    }

    pub fn is_simulated(&self) -> bool {
        self.target.is_simulated() && self.draft.as_ref().is_none_or(|d| d.is_simulated())
    }

    pub(crate) fn live_label(&self) -> String {
        if !self.target.is_simulated() {
            self.target.label().to_owned()
        } else {
            self.draft.as_ref().map(|d| d.label().to_owned()).unwrap_or_default()
        }
    }
}

impl TaskRunner for BackendRunner {
    fn run(&self, task: &Task, cancel: &CancellationToken) -> (TaskResult, Ticks) {
        match task.kind {
            TaskKind::PrefillDraft => {
                let cost = self.draft.as_ref().map_or(0, |d| d.prefill_cost());
                (Ok(TaskOutput::Prefilled), cost)
            }
            TaskKind::PrefillTarget => (Ok(TaskOutput::Prefilled), self.target.prefill_cost()),
            TaskKind::Draft => {
                let Some(draft) = &self.draft else {
                    return (Err(BackendError::unavailable("no draft backend configured")), 0);
                };
                match draft.generate_step(&task.context, cancel) {
                    Ok(done) => (Ok(TaskOutput::Step(done.value)), done.cost),
                    Err(e) => (Err(e), 0),
                }
            }
            TaskKind::Update => match self.target.generate_update(&task.context, cancel) {
                Ok(done) => (Ok(TaskOutput::Step(done.value)), done.cost),
                Err(e) => (Err(e), 0),
            },
            TaskKind::Verify => {
                let Some(candidate) = &task.candidate else {
                    return (Err(BackendError::Malformed("verify task without candidate".into())), 0);
                };
                let prior: Vec<&str> = task.context.steps().iter().map(|s| s.text.as_str()).collect();
                let prompt = match cpn::build_scoring_prompt(task.context.problem(), &prior, &candidate.text) {
                    Ok(p) => p,
                    Err(e) => return (Err(BackendError::Malformed(e.to_string())), 0),
                };
                match self.target.score_candidate(&prompt, cancel) {
                    Ok(done) => {
                        let verdict = cpn::verify(&done.value, &self.keywords, self.alpha);
                        (Ok(TaskOutput::Verdict(verdict)), done.cost)
                    }
                    Err(e) => (Err(e), 0),
                }
            }
        }
    }
}
