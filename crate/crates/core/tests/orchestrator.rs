mod common;

use std::time::Duration;

use common::{fixed_pair, random_case, sim};
use stepspec::backends::{Latency, Quality, SimulatedSpec};
use stepspec::orchestrator::{
    check_cancels, check_device_exclusivity, check_ordered_commits, check_rollback_completeness, check_safety,
    check_window_bound, Clock, Engine, EngineError,
};
use stepspec::trace::EventKind;
use stepspec::{EngineConfig, Policy, StepSource};

const PROBLEM: &str = "A train leaves at 3pm at 60 km/h. When has it covered 150 km?";

fn sources(r: &stepspec::EpisodeResult) -> Vec<StepSource> {
    r.transcript.steps().iter().map(|s| s.source).collect()
}

#[test]
fn every_draft_accepted() {
    let (d, t, cfg) = fixed_pair(0.9, 6);
    let r = Engine::new(Some(d), t, cfg).run_fpsr(PROBLEM).unwrap();
    assert_eq!(sources(&r), vec![StepSource::DraftAccepted; 6]);
    assert!(r.trace.iter().all(|e| e.kind != EventKind::Rollback));
    assert_eq!(r.acceptance_rate_committed, Some(1.0));
}

#[test]
fn every_draft_rejected_matches_the_pure_target_run() {
    let (d, t, cfg) = fixed_pair(0.5, 6);
    let engine = Engine::new(Some(d), t, cfg);
    let fpsr = engine.run_fpsr(PROBLEM).unwrap();
    let pure = engine.run_pure_target(PROBLEM).unwrap();
    assert_eq!(sources(&fpsr), vec![StepSource::TargetGenerated; 6]);
    assert_eq!(
        serde_json::to_string(&fpsr.transcript).unwrap(),
        serde_json::to_string(&pure.transcript).unwrap()
    );
}

#[test]
fn window_of_one() {
    for seed in 0..50 {
        let mut c = random_case(seed);
        c.cfg.lookahead_window = 1;
        let r = Engine::new(Some(c.draft), c.target, c.cfg)
            .run_fpsr(&c.problem)
            .unwrap();
        check_window_bound(&r.trace, 1).unwrap();
    }
}

#[test]
fn reference_matches_fpsr_and_is_slower_when_everything_passes() {
    let (d, t, cfg) = fixed_pair(0.9, 5);
    let engine = Engine::new(Some(d), t, cfg);
    let fpsr = engine.run_fpsr(PROBLEM).unwrap();
    let seq = engine.run_reference(PROBLEM).unwrap();
    assert_eq!(fpsr.transcript, seq.transcript);
    assert!(seq.makespan > fpsr.makespan);
}

#[test]
fn unavailable_drafter_degrades_to_the_target() {
    let mut draft = SimulatedSpec::new("draft", 1, Latency::Constant(3), Quality::Constant(0.9));
    draft.failure_rate = 1.0;
    let (_, t, cfg) = fixed_pair(0.9, 4);
    for policy in [Policy::SequentialSpec, Policy::Fpsr] {
        let r = Engine::new(Some(sim(draft.clone())), t.clone(), cfg.clone())
            .run(policy, PROBLEM)
            .unwrap();
        assert_eq!(sources(&r), vec![StepSource::TargetGenerated; 4]);
        assert_eq!(r.acceptance_rate, Some(0.0));
        check_safety(&r).unwrap();
    }
}

#[test]
fn single_round_cap() {
    let (d, t, mut cfg) = fixed_pair(0.9, 1);
    cfg.max_rounds = 1;
    let r = Engine::new(Some(d), t, cfg).run_reference(PROBLEM).unwrap();
    assert_eq!(r.rounds.len(), 1);
}

#[test]
fn pure_target_has_no_acceptance_rate() {
    let (d, t, cfg) = fixed_pair(0.9, 3);
    let engine = Engine::new(Some(d), t, cfg);
    let a = engine.run_pure_target(PROBLEM).unwrap();
    let b = engine.run_pure_target(PROBLEM).unwrap();
    assert_eq!(a.proposals, 0);
    let summary = serde_json::to_value(a.summary()).unwrap();
    assert!(summary["acceptance_rate"].is_null());
    assert_eq!(a.transcript, b.transcript);
}

#[test]
fn final_answer_seals_the_episode() {
    let mut draft = SimulatedSpec::new("draft", 4, Latency::Constant(2), Quality::Constant(0.95));
    draft.answer_round = Some(2);
    let (_, t, cfg) = fixed_pair(0.9, 10);
    let r = Engine::new(Some(sim(draft)), t, cfg).run_fpsr(PROBLEM).unwrap();
    assert_eq!(r.rounds.len(), 3);
    assert!(r.transcript.is_sealed());
    assert!(r.transcript.final_answer().is_some());
}

#[test]
fn invariants_hold_over_random_cases() {
    for seed in 0..200 {
        let c = random_case(seed);
        let engine = Engine::new(Some(c.draft), c.target, c.cfg.clone()).with_clock(Clock::Virtual(c.mode));
        for policy in Policy::ALL {
            let r = engine.run(policy, &c.problem).unwrap();
            let ctx = format!("seed {seed} {policy:?}");
            check_ordered_commits(&r.trace).expect(&ctx);
            check_cancels(&r.trace).expect(&ctx);
            check_rollback_completeness(&r.trace).expect(&ctx);
            check_device_exclusivity(&r.trace).expect(&ctx);
            check_safety(&r).expect(&ctx);
            let w = if policy == Policy::Fpsr {
                c.cfg.lookahead_window
            } else {
                1
            };
            check_window_bound(&r.trace, w).expect(&ctx);
            assert!(r.rounds.len() as u32 <= c.cfg.max_rounds, "{ctx}");
        }
    }
}

#[test]
fn threaded_executor_commits_the_same_sequence() {
    for seed in [1, 7, 19] {
        let c = random_case(seed);
        let virtual_run = Engine::new(Some(c.draft.clone()), c.target.clone(), c.cfg.clone())
            .run_fpsr(&c.problem)
            .unwrap();
        let wall = Engine::new(Some(c.draft), c.target, c.cfg)
            .with_clock(Clock::Wall {
                tick: Duration::from_micros(200),
            })
            .run_fpsr(&c.problem)
            .unwrap();
        assert_eq!(virtual_run.transcript, wall.transcript, "seed {seed}");
        check_rollback_completeness(&wall.trace).unwrap();
        check_cancels(&wall.trace).unwrap();
    }
}

#[test]
fn wall_clock_deadline() {
    let draft = SimulatedSpec::new("draft", 1, Latency::Constant(50), Quality::Constant(0.9));
    let target = SimulatedSpec::new("target", 2, Latency::Constant(50), Quality::Constant(1.0));
    let cfg = EngineConfig {
        max_rounds: 50,
        deadline_ms: Some(30),
        ..EngineConfig::default()
    };
    let err = Engine::new(Some(sim(draft)), sim(target), cfg)
        .with_clock(Clock::Wall {
            tick: Duration::from_millis(1),
        })
        .run_fpsr(PROBLEM)
        .unwrap_err();
    let EngineError::DeadlineExceeded { trace } = &err else {
        panic!("expected a deadline error, got {err:?}");
    };
    assert!(trace
        .iter()
        .any(|e| e.kind == EventKind::Cancel && e.get("reason") == Some("deadline")));
}

#[test]
fn failing_target_aborts_with_a_partial_trace() {
    let draft = SimulatedSpec::new("draft", 1, Latency::Constant(2), Quality::Constant(0.3));
    let mut target = SimulatedSpec::new("target", 2, Latency::Constant(5), Quality::Constant(1.0));
    target.failure_rate = 1.0;
    let cfg = EngineConfig {
        max_rounds: 4,
        ..EngineConfig::default()
    };
    let err = Engine::new(Some(sim(draft)), sim(target), cfg)
        .run_fpsr(PROBLEM)
        .unwrap_err();
    assert!(matches!(err, EngineError::Aborted { .. }), "{err:?}");
    assert!(!err.partial_trace().unwrap().is_empty());
}

#[test]
fn virtual_clock_refuses_live_backends() {
    let http = stepspec::backends::BackendSpec::Http(stepspec::backends::HttpSpec::new("http://127.0.0.1:9", "m"))
        .build(0, 64)
        .unwrap();
    let engine = Engine::new(None, http, EngineConfig::default()).with_clock(Clock::Virtual(Default::default()));
    assert!(matches!(
        engine.run_pure_target(PROBLEM),
        Err(EngineError::VirtualClockUnsupported(_))
    ));
}
