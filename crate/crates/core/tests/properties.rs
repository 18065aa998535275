use proptest::prelude::*;

use stepspec::backends::TokenDistribution;
use stepspec::cpn::{compute_ratio, decide, extract_keyword_probs, KeywordSpec};
use stepspec::sapo::{
    clipped_objective, composite_reward, group_advantages, length_penalty, RewardWeights, ToyPolicy, TrajectoryOutcome,
};
use stepspec::transcript::{ReasoningStep, StepSource, Transcript, WhitespaceTokenizer};

fn prob() -> impl Strategy<Value = f64> {
    1e-6..1.0f64
}

proptest! {
    #[test]
    fn ratio_scale_invariance(a in prob(), b in prob(), c in 1e-3..1e3f64, alpha in 0.01..0.99f64) {
        let r = compute_ratio(a, b).unwrap();
        let scaled = compute_ratio(c * a, c * b).unwrap();
        prop_assert!((r - scaled).abs() <= 1e-12);
        if (r - alpha).abs() > 1e-12 {
            prop_assert_eq!(decide(r, alpha).accepted, decide(scaled, alpha).accepted);
        }
    }

    #[test]
    fn ratio_complement(a in prob(), b in prob()) {
        let sum = compute_ratio(a, b).unwrap() + compute_ratio(b, a).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ratio_monotone(a in prob(), b in prob(), bump in 1e-3..0.5f64) {
        prop_assert!(compute_ratio(a + bump, b).unwrap() > compute_ratio(a, b).unwrap());
        prop_assert!(compute_ratio(a, b + bump).unwrap() < compute_ratio(a, b).unwrap());
    }

    #[test]
    fn rejection_persists_as_alpha_rises(rho in 0.0..=1.0f64, a1 in 0.0..1.0f64, step in 0.0..1.0f64) {
        let a2 = a1 + step * (1.0 - a1);
        if !decide(rho, a1).accepted {
            prop_assert!(!decide(rho, a2).accepted);
        }
    }

    #[test]
    fn keyword_mass_is_summed(p1 in 0.0..0.3f64, p2 in 0.0..0.3f64, n1 in 0.0..0.3f64) {
        let dist = TokenDistribution::new([
            ("positive".to_owned(), p1),
            (" Positive".to_owned(), p2),
            ("Negative".to_owned(), n1),
            ("the".to_owned(), 0.05),
        ]).unwrap();
        let spec = KeywordSpec::default();
        match extract_keyword_probs(&dist, &spec) {
            Ok((s_pos, s_neg)) => {
                prop_assert!((s_pos - (p1 + p2)).abs() < 1e-12);
                prop_assert!((s_neg - n1).abs() < 1e-12);
            }
            Err(_) => prop_assert!(p1 + p2 + n1 == 0.0),
        }
    }

    #[test]
    fn advantages_sum_to_zero(rewards in prop::collection::vec(-5.0..5.0f64, 2..64)) {
        let g = group_advantages(&rewards, 1e-8).unwrap();
        let raw: f64 = rewards.iter().map(|r| r - g.baseline).sum();
        prop_assert!(raw.abs() < 1e-9);
        prop_assert!(g.advantages.iter().sum::<f64>().abs() < 1e-6 * rewards.len() as f64);
        for (r, a) in rewards.iter().zip(&g.advantages) {
            prop_assert_eq!(*a, (r - g.baseline) / (g.sigma + g.delta));
        }
    }

    #[test]
    fn clipped_objective_is_a_lower_bound(u in 1e-3..5.0f64, adv in -3.0..3.0f64, eps in 0.01..0.99f64) {
        let j = clipped_objective(u, adv, eps).unwrap();
        prop_assert!(j <= u * adv + 1e-15);
        if (1.0 - eps..=1.0 + eps).contains(&u) {
            prop_assert_eq!(j, u * adv);
        }
    }

    #[test]
    fn composite_is_affine_in_each_weight(
        correct in any::<bool>(), rounds in 1u32..20, acc_frac in 0.0..=1.0f64, len in 0u64..10_000,
        w1 in 0.0..3.0f64, w2 in 0.0..3.0f64, w3 in 0.0..3.0f64, h in 0.01..1.0f64,
    ) {
        let o = TrajectoryOutcome {
            correct,
            n_accepted: (acc_frac * f64::from(rounds)).floor() as u32,
            n_rounds: rounds,
            length_tokens: len,
        };
        let base = RewardWeights { w1, w2, w3, ..Default::default() };
        let r0 = composite_reward(&o, &base).unwrap();
        let bumped = [
            (RewardWeights { w1: w1 + h, ..base }, r0.outcome),
            (RewardWeights { w2: w2 + h, ..base }, r0.draft),
            (RewardWeights { w3: w3 + h, ..base }, -r0.length),
        ];
        for (w, slope) in bumped {
            let r = composite_reward(&o, &w).unwrap();
            prop_assert!(((r.total - r0.total) / h - slope).abs() < 1e-9);
        }
    }

    #[test]
    fn length_penalty_monotone_and_bounded(l in 0u64..20_000, d in 0u64..5_000, k in 1e-5..0.01f64, c in 1u64..8_000) {
        let a = length_penalty(l, k, c);
        let b = length_penalty(l + d, k, c);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a);
    }

    #[test]
    fn softmax_rows_normalize(logits in prop::collection::vec(prop::collection::vec(-30.0..30.0f64, 3), 1..6)) {
        let p = ToyPolicy { logits, epsilon: 0.2 };
        for r in 0..p.rounds() {
            prop_assert!((p.probs(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn long_problems_and_gap_free_rounds(len in 1usize..12_000, steps in 0usize..20) {
        let problem = "x".repeat(len);
        let mut t = Transcript::new(&problem).unwrap();
        let tok = WhitespaceTokenizer;
        for i in 0..steps {
            let step = ReasoningStep::new(i as u32, format!("step {i} words"), StepSource::DraftAccepted, &tok).unwrap();
            t.push(step).unwrap();
        }
        prop_assert_eq!(t.problem().len(), len);
        for (i, s) in t.steps().iter().enumerate() {
            prop_assert_eq!(s.round_index as usize, i);
        }
        prop_assert_eq!(t.total_tokens(), 3 * steps as u64);
        let gap = ReasoningStep::new(steps as u32 + 1, "late", StepSource::DraftAccepted, &tok).unwrap();
        prop_assert!(t.push(gap).is_err());
    }
}
