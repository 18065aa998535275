#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepspec::backends::{Backend, Latency, Quality, SimulatedBackend, SimulatedSpec};
use stepspec::latsim::{AcceptSchedule, Scenario};
use stepspec::orchestrator::VerifyMode;
use stepspec::{EngineConfig, Policy};

pub fn sim(spec: SimulatedSpec) -> Arc<dyn Backend> {
    Arc::new(SimulatedBackend::new(spec, 0, 8192))
}

/// Draft/target pair with constant latencies and a fixed draft quality.
pub fn fixed_pair(quality: f64, rounds: u32) -> (Arc<dyn Backend>, Arc<dyn Backend>, EngineConfig) {
    let draft = SimulatedSpec::new("draft", 11, Latency::Constant(4), Quality::Constant(quality));
    let mut target = SimulatedSpec::new("target", 12, Latency::Constant(10), Quality::Constant(1.0));
    target.prefill = 2;
    let cfg = EngineConfig {
        max_rounds: rounds,
        ..EngineConfig::default()
    };
    (sim(draft), sim(target), cfg)
}

pub struct RandomCase {
    pub draft: Arc<dyn Backend>,
    pub target: Arc<dyn Backend>,
    pub cfg: EngineConfig,
    pub mode: VerifyMode,
    pub problem: String,
}

/// Random latencies, quality schedules, noise, failures and answer rounds.
pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latency = |rng: &mut ChaCha8Rng, max: u64| {
        let lo = rng.random_range(0..max);
        if rng.random::<bool>() {
            Latency::Constant(lo)
        } else {
            Latency::Uniform(lo, lo + rng.random_range(0..max))
        }
    };
    let schedule: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random::<f64>()).collect();
    let mut draft = SimulatedSpec::new("draft", rng.random(), latency(&mut rng, 8), Quality::PerRound(schedule));
    draft.prefill = rng.random_range(0..4);
    draft.quality_jitter = rng.random_range(0.0..0.3);
    draft.failure_rate = if rng.random::<f64>() < 0.2 {
        rng.random_range(0.0..0.3)
    } else {
        0.0
    };
    draft.answer_round = rng.random::<bool>().then(|| rng.random_range(1..10));
    draft.words_per_step = rng.random_range(3..20);
    let mut target = SimulatedSpec::new("target", rng.random(), latency(&mut rng, 30), Quality::Constant(1.0));
    target.score_latency = latency(&mut rng, 4);
    target.prefill = rng.random_range(0..6);
    target.noise = rng.random_range(0.0..0.3);
    target.answer_round = rng.random::<bool>().then(|| rng.random_range(1..10));
    let cfg = EngineConfig {
        lookahead_window: rng.random_range(1..6),
        max_rounds: rng.random_range(1..12),
        seed,
        ..EngineConfig::default()
    };
    RandomCase {
        draft: sim(draft),
        target: sim(target),
        cfg,
        mode: if rng.random::<bool>() {
            VerifyMode::Preempt
        } else {
            VerifyMode::Parallel
        },
        problem: format!(
            "problem #{seed}: find x such that {}x = {}",
            rng.random_range(2..9),
            rng.random_range(10..99)
        ),
    }
}

/// Scenario in the regime where speculation pays: the drafter is faster than
/// the target (also at prefill), verification is cheap, and accepted rounds
/// save more target time than drafting and verifying every round costs.
pub fn profitable_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    loop {
        let target = rng.random_range(20..100u64);
        let rounds = rng.random_range(1..12u32);
        let prefill_target = rng.random_range(0..20);
        let s = Scenario {
            rounds,
            prefill_target,
            prefill_draft: rng.random_range(0..=prefill_target),
            draft_step: rng.random_range(1..target / 2),
            target_step: target,
            verify: rng.random_range(1..=target / 10),
            accept_schedule: AcceptSchedule::Bernoulli {
                p: rng.random_range(0.3..1.0),
                seed: rng.random(),
            },
            policy: Policy::Fpsr,
            window: rng.random_range(1..6),
            verify_mode: if rng.random::<bool>() {
                VerifyMode::Preempt
            } else {
                VerifyMode::Parallel
            },
        };
        let accepted = s.accept_schedule.realize(rounds).iter().filter(|a| **a).count() as u64;
        if accepted > 0 && accepted * s.target_step >= u64::from(rounds) * (s.draft_step + s.verify) {
            return s;
        }
    }
}
