use serde::{Deserialize, Serialize};

use super::{clipped_objective, clipped_objective_du, SapoError, DEFAULT_EPSILON};

/// Per-round categorical policy over `K` step templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    /// `logits[round][action]`.
    pub logits: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl ToyPolicy {
    pub fn uniform(rounds: usize, actions: usize) -> Self {
        Self {
            logits: vec![vec![0.0; actions]; rounds],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn rounds(&self) -> usize {
        self.logits.len()
    }

    pub fn actions(&self) -> usize {
        self.logits.first().map_or(0, Vec::len)
    }

    pub fn probs(&self, round: usize) -> Vec<f64> {
        softmax(&self.logits[round])
    }

    pub fn prob(&self, round: usize, action: usize) -> f64 {
        self.probs(round)[action]
    }

    pub fn modal_actions(&self) -> Vec<usize> {
        self.logits
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i)
            })
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        let k = self.actions();
        for (row, chunk) in self.logits.iter_mut().zip(theta.chunks(k)) {
            row.copy_from_slice(chunk);
        }
    }

    fn same_shape(&self, other: &ToyPolicy) -> bool {
        self.logits.len() == other.logits.len()
            && self.logits.iter().zip(&other.logits).all(|(a, b)| a.len() == b.len())
    }

    /// `π(a|round) / π_old(a|round)`.
    pub fn policy_ratio(&self, old: &ToyPolicy, round: usize, action: usize) -> Result<f64, SapoError> {
        if !self.same_shape(old) || round >= self.rounds() || action >= self.actions() {
            return Err(SapoError::ShapeMismatch);
        }
        let p_old = old.prob(round, action);
        if p_old <= 0.0 {
            return Err(SapoError::ZeroOldProbability { round, action });
        }
        Ok(self.prob(round, action) / p_old)
    }

    /// Surrogate over a group: `Σ_i (1/R) Σ_r clip_obj(u_ir, Ã_i)` for
    /// trajectories `(actions per round, advantage)`.
    pub fn surrogate(&self, old: &ToyPolicy, samples: &[(Vec<usize>, f64)]) -> Result<f64, SapoError> {
        let r = self.rounds() as f64;
        let mut total = 0.0;
        for (actions, adv) in samples {
            for (round, &a) in actions.iter().enumerate() {
                let u = self.policy_ratio(old, round, a)?;
                total += clipped_objective(u, *adv, self.epsilon)? / r;
            }
        }
        Ok(total)
    }

    /// Analytic gradient of [`ToyPolicy::surrogate`] with respect to the
    /// flattened logits, using `∂u/∂z_j = u·(1[j=a] − π_j)`.
    pub fn surrogate_grad(&self, old: &ToyPolicy, samples: &[(Vec<usize>, f64)]) -> Result<Vec<f64>, SapoError> {
        let k = self.actions();
        let r = self.rounds() as f64;
        let probs: Vec<Vec<f64>> = (0..self.rounds()).map(|i| self.probs(i)).collect();
        let mut grad = vec![0.0; self.rounds() * k];
        for (actions, adv) in samples {
            for (round, &a) in actions.iter().enumerate() {
                let u = self.policy_ratio(old, round, a)?;
                let outer = clipped_objective_du(u, *adv, self.epsilon) / r;
                if outer == 0.0 {
                    continue;
                }
                for (j, p) in probs[round].iter().enumerate() {
                    let indicator = if j == a { 1.0 } else { 0.0 };
                    grad[round * k + j] += outer * u * (indicator - p);
                }
            }
        }
        Ok(grad)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_policies_have_unit_ratio() {
        let p = ToyPolicy {
            logits: vec![vec![0.3, -1.0, 2.0], vec![0.0, 0.0, 0.0]],
            epsilon: 0.2,
        };
        for round in 0..2 {
            for action in 0..3 {
                assert!((p.policy_ratio(&p, round, action).unwrap() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn raising_a_logit_by_ln2() {
        let old = ToyPolicy::uniform(1, 3);
        let mut new = old.clone();
        new.logits[0][1] += 2f64.ln();
        // Direct evaluation: 2/(1+2+1) over 1/3.
        assert!((new.policy_ratio(&old, 0, 1).unwrap() - 1.5).abs() < 1e-12);
        assert!((new.policy_ratio(&old, 0, 0).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn shape_and_support_errors() {
        let a = ToyPolicy::uniform(2, 3);
        let b = ToyPolicy::uniform(2, 4);
        assert_eq!(a.policy_ratio(&b, 0, 0), Err(SapoError::ShapeMismatch));
        let mut zero = ToyPolicy::uniform(1, 2);
        zero.logits[0][0] = f64::NEG_INFINITY;
        let p = ToyPolicy::uniform(1, 2);
        assert_eq!(
            p.policy_ratio(&zero, 0, 0),
            Err(SapoError::ZeroOldProbability { round: 0, action: 0 })
        );
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
