mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepspec::latsim::{simulate, sweep_alpha, AcceptSchedule, QualitySampler, Scenario};
use stepspec::orchestrator::{check_device_exclusivity, check_ordered_commits, check_window_bound};
use stepspec::schema;
use stepspec::Policy;

#[test]
fn timelines_respect_devices_and_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let s = common::profitable_scenario(&mut rng);
        for policy in Policy::ALL {
            let t = simulate(&s.with_policy(policy)).unwrap();
            check_device_exclusivity(&t.events).unwrap();
            check_ordered_commits(&t.events).unwrap();
            let w = if policy == Policy::Fpsr { s.window } else { 1 };
            check_window_bound(&t.events, w).unwrap();
        }
    }
}

#[test]
fn scenario_files_are_checked_strictly() {
    let s = Scenario::calibration(3);
    let text = serde_json::to_string(&s).unwrap();
    schema::check_str("scenario.json", &text).unwrap();
    assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["latency_ratio"] = 3.into();
    assert!(schema::check_str("scenario.json", &v.to_string()).is_err());
}

#[test]
fn repeated_sweeps_agree() {
    let sampler = QualitySampler::Beta {
        a: 2.0,
        b: 2.0,
        seed: 4,
    };
    let a = sweep_alpha(&Scenario::calibration(1), &[0.3, 0.7], &sampler, 5).unwrap();
    let b = sweep_alpha(&Scenario::calibration(1), &[0.3, 0.7], &sampler, 5).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepting_a_round_never_slows_an_episode(seed in any::<u64>(), flip in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::profitable_scenario(&mut rng);
        let mut accepts = s.accept_schedule.realize(s.rounds);
        let i = flip % accepts.len();
        prop_assume!(!accepts[i]);
        let before = Scenario { accept_schedule: AcceptSchedule::Fixed(accepts.clone()), ..s.clone() };
        accepts[i] = true;
        let after = Scenario { accept_schedule: AcceptSchedule::Fixed(accepts), ..s };
        for policy in [Policy::SequentialSpec, Policy::OverlapOnly, Policy::Fpsr] {
            let slow = simulate(&before.with_policy(policy)).unwrap().makespan;
            let fast = simulate(&after.with_policy(policy)).unwrap().makespan;
            prop_assert!(fast <= slow, "{policy:?}: {fast} > {slow}");
        }
    }

    #[test]
    fn sweep_is_monotone_in_alpha(seed in any::<u64>(), a in 0.5..8.0f64, b in 0.5..8.0f64) {
        let alphas: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
        let rows = sweep_alpha(&Scenario::calibration(seed), &alphas, &QualitySampler::Beta { a, b, seed }, 3).unwrap();
        prop_assert_eq!(rows[0].acceptance, 1.0);
        for w in rows.windows(2) {
            prop_assert!(w[1].acceptance <= w[0].acceptance);
            prop_assert!(w[1].speedup <= w[0].speedup);
        }
    }
}
