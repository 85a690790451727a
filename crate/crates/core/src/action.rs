//! Decision rules mapping the policy posterior to the next action.

use std::fmt;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AifError, Result};
use crate::math::{argmax, SimplexVector};
use crate::model::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Bayesian model average: the action with the most policy mass behind it.
    #[default]
    Kd,
    /// The most probable policy's action.
    GreedyMax,
    /// A policy sampled from Q(π), then its action.
    GreedySample,
}

impl std::str::FromStr for SelectionMode {
    type Err = AifError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd" => Ok(Self::Kd),
            "greedy_max" => Ok(Self::GreedyMax),
            "greedy_sample" => Ok(Self::GreedySample),
            other => Err(AifError::UnknownSelection(other.to_string())),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kd => "kd",
            Self::GreedyMax => "greedy_max",
            Self::GreedySample => "greedy_sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDecision {
    pub action: usize,
    pub per_action_mass: SimplexVector,
    pub mode: SelectionMode,
}

/// Picks the action for 0-based step `t`. Ties go to the lowest action index.
pub fn select_action<R: Rng>(
    q_pi: &SimplexVector,
    policies: &[Policy],
    num_actions: usize,
    t: usize,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<ActionDecision> {
    if policies.is_empty() {
        return Err(AifError::NoPolicies);
    }
    if q_pi.len() != policies.len() {
        return Err(AifError::SupportMismatch {
            left: q_pi.len(),
            right: policies.len(),
        });
    }
    if t >= policies[0].len() {
        return Err(AifError::BadTimeStep {
            t: t + 1,
            reason: "past the policy horizon",
        });
    }
    let mut mass = Array1::zeros(num_actions);
    for (policy, &q) in policies.iter().zip(q_pi.as_slice()) {
        mass[policy.action_at(t)] += q;
    }
    let action = match mode {
        SelectionMode::Kd => argmax(mass.view()),
        SelectionMode::GreedyMax => policies[q_pi.argmax()].action_at(t),
        SelectionMode::GreedySample => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = q_pi.argmax();
            for (k, &q) in q_pi.as_slice().iter().enumerate() {
                acc += q;
                if q > 0.0 && u < acc {
                    chosen = k;
                    break;
                }
            }
            policies[chosen].action_at(t)
        }
    };
    let total = mass.sum();
    mass /= total;
    Ok(ActionDecision {
        action,
        per_action_mass: SimplexVector::from_array_unchecked(mass),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pols(actions: &[&[usize]]) -> Vec<Policy> {
        actions.iter().map(|a| Policy::new(a.to_vec(), 4).unwrap()).collect()
    }

    #[test]
    fn unanimous_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pols(&[&[2, 0], &[2, 1], &[2, 3]]);
        let q = SimplexVector::from_vec(vec![0.2, 0.3, 0.5]).unwrap();
        let d = select_action(&q, &p, 4, 0, SelectionMode::Kd, &mut rng).unwrap();
        assert_eq!(d.action, 2);
        assert_eq!(d.per_action_mass.get(2), 1.0);
    }

    #[test]
    fn model_average_beats_single_best_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pols(&[&[0], &[1], &[1]]);
        let q = SimplexVector::from_vec(vec![0.4, 0.35, 0.25]).unwrap();
        let kd = select_action(&q, &p, 4, 0, SelectionMode::Kd, &mut rng).unwrap();
        assert_eq!(kd.action, 1);
        assert!((kd.per_action_mass.get(1) - 0.6).abs() < 1e-15);
        let greedy = select_action(&q, &p, 4, 0, SelectionMode::GreedyMax, &mut rng).unwrap();
        assert_eq!(greedy.action, 0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pols(&[&[1], &[0]]);
        let q = SimplexVector::uniform(2);
        assert_eq!(select_action(&q, &p, 4, 0, SelectionMode::Kd, &mut rng).unwrap().action, 0);
    }

    #[test]
    fn errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = SimplexVector::uniform(1);
        assert!(matches!(
            select_action(&q, &[], 4, 0, SelectionMode::Kd, &mut rng),
            Err(AifError::NoPolicies)
        ));
        assert!("softmax".parse::<SelectionMode>().is_err());
    }

    #[test]
    fn sampling_respects_zero_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = pols(&[&[0], &[1], &[2]]);
        let q = SimplexVector::from_vec(vec![0.0, 1.0, 0.0]).unwrap();
        for _ in 0..50 {
            let d = select_action(&q, &p, 4, 0, SelectionMode::GreedySample, &mut rng).unwrap();
            assert_eq!(d.action, 1);
        }
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.001f64..1.0, n),
                proptest::collection::vec(0usize..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mass_sums_to_one_and_ignores_order((raw, acts) in case(), seed in 0u64..1000) {
            let total: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let p: Vec<Policy> = acts.iter().map(|&a| Policy::new(vec![a], 4).unwrap()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = select_action(&SimplexVector::from_vec(q.clone()).unwrap(), &p, 4, 0, SelectionMode::Kd, &mut rng).unwrap();
            prop_assert!((d.per_action_mass.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);

            let mut order: Vec<usize> = (0..q.len()).collect();
            order.reverse();
            let q_rev: Vec<f64> = order.iter().map(|&k| q[k]).collect();
            let p_rev: Vec<Policy> = order.iter().map(|&k| p[k].clone()).collect();
            let d_rev = select_action(&SimplexVector::from_vec(q_rev).unwrap(), &p_rev, 4, 0, SelectionMode::Kd, &mut rng).unwrap();
            prop_assert_eq!(d.action, d_rev.action);

            let best = d.per_action_mass.argmax();
            let k_max = SimplexVector::from_vec(q.clone()).unwrap().argmax();
            let shares = p.iter().enumerate().any(|(k, pol)| k != k_max && pol.action_at(0) == p[k_max].action_at(0));
            if q[k_max] > 0.5 && !shares {
                let g = select_action(&SimplexVector::from_vec(q).unwrap(), &p, 4, 0, SelectionMode::GreedyMax, &mut rng).unwrap();
                prop_assert_eq!(g.action, best);
            }
        }
    }
}
