//! Expected free energy, the policy posterior and policy-marginal beliefs.

use std::ops::{Add, AddAssign};

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{AifError, Result};
use crate::math::{entropy_view, kl_view, softmax_view, SimplexVector};
use crate::model::Model;
use crate::perception::BeliefEnsemble;

/// Terms of the expected free energy of one future step (or a sum of steps).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EfeBreakdown {
    pub risk: f64,
    pub ambiguity: f64,
    pub a_novelty: f64,
    pub b_novelty: f64,
    pub total: f64,
}

impl EfeBreakdown {
    fn new(risk: f64, ambiguity: f64, a_novelty: f64, b_novelty: f64) -> Self {
        Self {
            risk,
            ambiguity,
            a_novelty,
            b_novelty,
            total: ambiguity - a_novelty + risk - b_novelty,
        }
    }
}

impl Add for EfeBreakdown {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            risk: self.risk + o.risk,
            ambiguity: self.ambiguity + o.ambiguity,
            a_novelty: self.a_novelty + o.a_novelty,
            b_novelty: self.b_novelty + o.b_novelty,
            total: self.total + o.total,
        }
    }
}

impl AddAssign for EfeBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Expected free energy of future step `t` (0-based, `t >= tau`) given the
/// policy's beliefs about S_{t−1} and S_t and the action taken between them.
///
/// Risk is KL(q(S_t) ‖ C); ambiguity the expected emission entropy. The
/// novelty terms use the weights W = ½(1/c − 1/c₀): B-novelty is
/// Σ_ij q(S_t)[i] q(S_{t−1})[j] W_B[i, j] and A-novelty is
/// Σ_o (A q(S_t))[o] Σ_j W_A[o, j] q(S_t)[j]. Each is zero when the
/// corresponding map is not being learned.
pub fn efe_components(
    prev: ArrayView1<f64>,
    current: ArrayView1<f64>,
    action: usize,
    model: &Model,
    t: usize,
    tau: usize,
) -> Result<EfeBreakdown> {
    if t < tau || t == 0 {
        return Err(AifError::BadTimeStep {
            t: t + 1,
            reason: "expected free energy is defined for future steps only",
        });
    }
    let risk = kl_view(current, model.c.probs())?;
    let ambiguity = model
        .a
        .columns()
        .into_iter()
        .zip(current.iter())
        .filter(|(_, &q)| q > 0.0)
        .map(|(col, &q)| q * entropy_view(col))
        .sum();
    let a_novelty = match model.novelty_a() {
        Some(w) => {
            let predicted_obs = model.a.dot(&current);
            predicted_obs.dot(&w.dot(&current))
        }
        None => 0.0,
    };
    let b_novelty = match model.novelty_b(action) {
        Some(w) => current.dot(&w.dot(&prev)),
        None => 0.0,
    };
    Ok(EfeBreakdown::new(risk, ambiguity, a_novelty, b_novelty))
}

/// Sum of per-step expected free energies over steps `tau..len` of a track.
/// `tau` counts the observations received so far.
pub fn total_efe(track: ArrayView2<f64>, actions: &[usize], model: &Model, tau: usize) -> Result<EfeBreakdown> {
    let len = track.nrows();
    if tau == 0 || tau >= len {
        return Err(AifError::BadTimeStep {
            t: tau,
            reason: "planning needs at least one observation and one remaining step",
        });
    }
    let mut sum = EfeBreakdown::default();
    for t in tau..len {
        sum += efe_components(track.row(t - 1), track.row(t), actions[t - 1], model, t, tau)?;
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPosterior {
    pub q_pi: SimplexVector,
    pub g_totals: Vec<f64>,
    pub f_pis: Vec<f64>,
}

/// Q(π) = softmax(−G − F).
pub fn policy_posterior(g_totals: &[f64], f_pis: &[f64]) -> Result<PolicyPosterior> {
    let active = vec![true; g_totals.len()];
    policy_posterior_masked(g_totals, f_pis, &active)
}

/// Q(π) = softmax(−G − F) over the active policies; inactive ones get zero mass.
pub fn policy_posterior_masked(g_totals: &[f64], f_pis: &[f64], active: &[bool]) -> Result<PolicyPosterior> {
    if g_totals.len() != f_pis.len() || g_totals.len() != active.len() {
        return Err(AifError::SupportMismatch {
            left: g_totals.len(),
            right: f_pis.len().min(active.len()),
        });
    }
    let idx: Vec<usize> = (0..active.len()).filter(|&k| active[k]).collect();
    if idx.is_empty() {
        return Err(AifError::NoPolicies);
    }
    let logits: Array1<f64> = idx.iter().map(|&k| -g_totals[k] - f_pis[k]).collect();
    let probs = softmax_view(logits.view())?;
    let mut q = Array1::zeros(active.len());
    for (&k, &p) in idx.iter().zip(probs.iter()) {
        q[k] = p;
    }
    Ok(PolicyPosterior {
        q_pi: SimplexVector::from_array_unchecked(q),
        g_totals: g_totals.to_vec(),
        f_pis: f_pis.to_vec(),
    })
}

/// Q(S_t) = Σ_k Q(π_k) Q(S_t | π_k).
pub fn marginal_state_belief(ensemble: &BeliefEnsemble, q_pi: &SimplexVector, t: usize) -> Result<SimplexVector> {
    if ensemble.tracks.len() != q_pi.len() {
        return Err(AifError::SupportMismatch {
            left: ensemble.tracks.len(),
            right: q_pi.len(),
        });
    }
    let m = ensemble.past.ncols();
    let mut out = Array1::zeros(m);
    for (track, &q) in ensemble.tracks.iter().zip(q_pi.as_slice()) {
        if q > 0.0 {
            out.scaled_add(q, &track.row(t));
        }
    }
    let total = out.sum();
    SimplexVector::new(out / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::DirichletCounts;
    use crate::model::{model_from_tables, Policy};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn model_with(beta: Array2<f64>, c: SimplexVector, a: Array2<f64>) -> Model {
        let m = beta.nrows();
        let mut model = model_from_tables(
            a,
            vec![DirichletCounts::new(beta.clone()).unwrap().mean()],
            SimplexVector::uniform(m),
            c,
            vec![Policy::new(vec![0], 1).unwrap()],
            2,
        )
        .unwrap();
        model.beta_post = vec![DirichletCounts::new(beta).unwrap()];
        model.beta_prior = model.beta_post.clone();
        model.learn_b = true;
        model.refresh().unwrap();
        model
    }

    #[test]
    fn risk_vanishes_at_preferences() {
        let c = SimplexVector::from_vec(vec![0.2, 0.8]).unwrap();
        let model = model_with(Array2::ones((2, 2)), c.clone(), Array2::eye(2));
        let out = efe_components(c.probs(), c.probs(), 0, &model, 1, 1).unwrap();
        assert!(out.risk.abs() < 1e-15);
    }

    #[test]
    fn identity_emission_has_no_ambiguity() {
        let model = model_with(Array2::ones((3, 3)), SimplexVector::uniform(3), Array2::eye(3));
        let q = array![0.2, 0.5, 0.3];
        let out = efe_components(q.view(), q.view(), 0, &model, 1, 1).unwrap();
        assert_eq!(out.ambiguity, 0.0);
        assert_eq!(out.a_novelty, 0.0);
    }

    #[test]
    fn b_novelty_uniform_two_state() {
        let model = model_with(Array2::ones((2, 2)), SimplexVector::uniform(2), Array2::eye(2));
        let q = array![0.5, 0.5];
        let out = efe_components(q.view(), q.view(), 0, &model, 1, 1).unwrap();
        // direct: four cells, each weight ¼, W = ½(1/1 − 1/2)
        let direct: f64 = (0..4).map(|_| 0.25 * 0.5 * (1.0 / 1.0 - 1.0 / 2.0)).sum();
        assert!((out.b_novelty - direct).abs() < 1e-15);
        assert!((out.b_novelty - 0.25).abs() < 1e-15);
    }

    #[test]
    fn past_steps_are_rejected() {
        let model = model_with(Array2::ones((2, 2)), SimplexVector::uniform(2), Array2::eye(2));
        let q = array![0.5, 0.5];
        assert!(efe_components(q.view(), q.view(), 0, &model, 1, 2).is_err());
        let track = Array2::from_elem((2, 2), 0.5);
        assert!(total_efe(track.view(), &[0], &model, 2).is_err());
    }

    #[test]
    fn total_efe_vanishes_with_certain_known_model() {
        let c = SimplexVector::from_vec(vec![0.3, 0.7]).unwrap();
        let model = model_with(Array2::from_elem((2, 2), 1e12), c.clone(), Array2::eye(2));
        let mut track = Array2::zeros((2, 2));
        track.row_mut(0).assign(&array![0.5, 0.5]);
        track.row_mut(1).assign(&c.probs());
        let g = total_efe(track.view(), &[0], &model, 1).unwrap();
        assert!(g.total.abs() < 1e-10);
    }

    #[test]
    fn total_efe_is_sum_of_steps() {
        let model = model_with(
            array![[0.5, 2.0, 1.0], [1.0, 0.3, 1.0], [2.0, 1.0, 0.7]],
            SimplexVector::from_vec(vec![0.1, 0.2, 0.7]).unwrap(),
            Array2::eye(3),
        );
        let track = array![[0.2, 0.3, 0.5], [0.6, 0.3, 0.1], [0.1, 0.1, 0.8], [0.3, 0.3, 0.4]];
        let actions = [0, 0, 0];
        let total = total_efe(track.view(), &actions, &model, 1).unwrap();
        let manual: f64 = (1..4)
            .map(|t| efe_components(track.row(t - 1), track.row(t), 0, &model, t, 1).unwrap().total)
            .sum();
        assert!((total.total - manual).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let flat = policy_posterior(&[3.0; 4], &[1.0; 4]).unwrap();
        assert!(flat.q_pi.as_slice().iter().all(|&q| (q - 0.25).abs() < 1e-15));
        let post = policy_posterior(&[0.0, 10.0], &[0.0, 0.0]).unwrap();
        assert!((post.q_pi.get(0) - 0.9999546).abs() < 1e-7);
        assert!((post.q_pi.get(1) - 4.54e-5).abs() < 1e-7);
        assert!(policy_posterior(&[0.0], &[0.0, 1.0]).is_err());
        let masked = policy_posterior_masked(&[0.0, 1.0, 2.0], &[0.0; 3], &[false, true, true]).unwrap();
        assert_eq!(masked.q_pi.get(0), 0.0);
        assert!((masked.q_pi.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_belief_examples() {
        let mut ensemble = BeliefEnsemble::new(2, 1, 2);
        ensemble.tracks[0].row_mut(0).assign(&array![1.0, 0.0]);
        ensemble.tracks[1].row_mut(0).assign(&array![0.0, 1.0]);
        let q = SimplexVector::from_vec(vec![0.3, 0.7]).unwrap();
        assert_eq!(marginal_state_belief(&ensemble, &q, 0).unwrap().as_slice(), &[0.3, 0.7]);
        let pick = SimplexVector::one_hot(2, 1);
        assert_eq!(marginal_state_belief(&ensemble, &pick, 0).unwrap().as_slice(), &[0.0, 1.0]);
        let same = BeliefEnsemble::new(3, 1, 4);
        let q = SimplexVector::from_vec(vec![0.1, 0.6, 0.3]).unwrap();
        let m = marginal_state_belief(&same, &q, 0).unwrap();
        assert!(m.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn risk_shrinks_along_path_to_preferences() {
        let c = array![0.05, 0.15, 0.8];
        let start = array![0.7, 0.2, 0.1];
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let q = &start * (1.0 - lambda) + &c * lambda;
            let r = kl_view(q.view(), c.view()).unwrap();
            assert!(r < last);
            last = r;
        }
        assert!(last.abs() < 1e-15);
    }

    fn simplex(len: usize) -> impl Strategy<Value = Array1<f64>> {
        proptest::collection::vec(0.0f64..1.0, len).prop_map(|v| {
            let mut a = Array1::from(v) + 1e-6;
            let s = a.sum();
            a /= s;
            a
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn efe_terms_nonnegative(
            prev in simplex(3),
            cur in simplex(3),
            c in simplex(3),
            counts in proptest::collection::vec(0.05f64..20.0, 9),
            a_raw in proptest::collection::vec(0.01f64..1.0, 9),
        ) {
            let mut a = Array2::from_shape_vec((3, 3), a_raw).unwrap();
            for mut col in a.columns_mut() { let s = col.sum(); col /= s; }
            let beta = Array2::from_shape_vec((3, 3), counts).unwrap();
            let mut model = model_with(beta.clone(), SimplexVector::new(c).unwrap(), a);
            model.alpha = Some(crate::model::EmissionCounts {
                prior: DirichletCounts::new(beta.clone()).unwrap(),
                post: DirichletCounts::new(beta).unwrap(),
            });
            model.refresh().unwrap();
            let out = efe_components(prev.view(), cur.view(), 0, &model, 1, 1).unwrap();
            prop_assert!(out.risk >= 0.0 && out.ambiguity >= 0.0);
            prop_assert!(out.a_novelty >= 0.0 && out.b_novelty >= 0.0);
            let total = out.ambiguity - out.a_novelty + out.risk - out.b_novelty;
            prop_assert!((out.total - total).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn posterior_shift_invariant(
            g in proptest::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let f = vec![0.5; g.len()];
            let base = policy_posterior(&g, &f).unwrap();
            let moved: Vec<f64> = g.iter().map(|x| x + shift).collect();
            let shifted = policy_posterior(&moved, &f).unwrap();
            let f_moved: Vec<f64> = f.iter().map(|x| x + shift).collect();
            let shifted_f = policy_posterior(&g, &f_moved).unwrap();
            for k in 0..g.len() {
                prop_assert!((base.q_pi.get(k) - shifted.q_pi.get(k)).abs() <= 1e-12);
                prop_assert!((base.q_pi.get(k) - shifted_f.q_pi.get(k)).abs() <= 1e-12);
                let direct = (-g[k] - f[k]).exp() / g.iter().zip(&f).map(|(a, b)| (-a - b).exp()).sum::<f64>();
                prop_assert!((base.q_pi.get(k) - direct).abs() <= 1e-12);
            }
        }
    }
}
