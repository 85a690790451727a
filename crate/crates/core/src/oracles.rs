//! Brute-force references for tests and the acceptance suite. Nothing in the
//! agent pipeline calls into this module.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::environment::NUM_ACTIONS;
use crate::error::{AifError, Result};
use crate::math::{SimplexVector, PROB_FLOOR};
use crate::model::{enumerate_policies, model_from_tables, Model};

/// Largest number of state sequences the oracles will enumerate.
pub const MAX_SEQUENCES: usize = 256;

/// A POMDP small enough to enumerate every state sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerablePomdp {
    /// `a[observation, state]`
    pub a: Array2<f64>,
    /// `b[action][next, current]`
    pub b: Vec<Array2<f64>>,
    pub d: Array1<f64>,
    pub num_steps: usize,
}

/// Column-stochastic matrix with entries drawn from U(0.05, 1) before normalizing.
pub fn random_stochastic<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.05..1.0));
    for mut col in m.columns_mut() {
        let s = col.sum();
        col /= s;
    }
    m
}

impl EnumerablePomdp {
    pub fn random<R: Rng>(
        num_states: usize,
        num_obs: usize,
        num_actions: usize,
        num_steps: usize,
        rng: &mut R,
    ) -> Self {
        let a = random_stochastic(num_obs, num_states, rng);
        let b = (0..num_actions)
            .map(|_| random_stochastic(num_states, num_states, rng))
            .collect();
        let d = random_stochastic(num_states, 1, rng).column(0).to_owned();
        Self { a, b, d, num_steps }
    }

    pub fn num_states(&self) -> usize {
        self.a.ncols()
    }

    fn sample<R: Rng>(p: impl Iterator<Item = f64>, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, x) in p.enumerate() {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Samples a full observation sequence from the model under `actions`.
    pub fn sample_observations<R: Rng>(&self, actions: &[usize], rng: &mut R) -> Vec<usize> {
        let mut state = Self::sample(self.d.iter().copied(), rng);
        let mut obs = Vec::with_capacity(self.num_steps);
        for t in 0..self.num_steps {
            if t > 0 {
                state = Self::sample(self.b[actions[t - 1]].column(state).iter().copied(), rng);
            }
            obs.push(Self::sample(self.a.column(state).iter().copied(), rng));
        }
        obs
    }

    /// The same tables as an agent model, with every policy of the
    /// product set and a uniform preference.
    pub fn to_model(&self) -> Result<Model> {
        let m = self.num_states();
        let k = self.b.len();
        let policies = enumerate_policies(k, self.num_steps - 1, k.pow(self.num_steps as u32 - 1))?;
        model_from_tables(
            self.a.clone(),
            self.b.clone(),
            SimplexVector::new(self.d.clone())?,
            SimplexVector::uniform(m),
            policies,
            self.num_steps,
        )
    }

    fn sequences(&self) -> Result<Vec<Vec<usize>>> {
        let m = self.num_states();
        let count = m
            .checked_pow(self.num_steps as u32)
            .filter(|&c| c <= MAX_SEQUENCES)
            .ok_or(AifError::TooLarge(m.saturating_pow(self.num_steps as u32)))?;
        Ok((0..count)
            .map(|mut code| {
                let mut seq = vec![0; self.num_steps];
                for slot in seq.iter_mut().rev() {
                    *slot = code % m;
                    code /= m;
                }
                seq
            })
            .collect())
    }

    /// Floored joint P(o_{1:τ}, s_{1:T} | actions) of one state sequence.
    pub fn joint(&self, states: &[usize], actions: &[usize], obs: &[usize]) -> f64 {
        let f = |p: f64| p.max(PROB_FLOOR);
        let mut p = f(self.d[states[0]]);
        for t in 1..states.len() {
            p *= f(self.b[actions[t - 1]][[states[t], states[t - 1]]]);
        }
        for (t, &o) in obs.iter().enumerate() {
            p *= f(self.a[[o, states[t]]]);
        }
        p
    }

    /// Every state sequence with its floored joint probability.
    pub fn enumerate_joint(&self, actions: &[usize], obs: &[usize]) -> Result<Vec<(Vec<usize>, f64)>> {
        if actions.len() + 1 < self.num_steps || actions.iter().any(|&a| a >= self.b.len()) {
            return Err(AifError::Config("action sequence does not fit the model".into()));
        }
        Ok(self
            .sequences()?
            .into_iter()
            .map(|seq| {
                let p = self.joint(&seq, actions, obs);
                (seq, p)
            })
            .collect())
    }
}

/// Exact P(S_t | o_{1:τ}, actions) for every t by summing the joint.
pub fn exact_smoothing_posterior(
    pomdp: &EnumerablePomdp,
    actions: &[usize],
    obs: &[usize],
) -> Result<Vec<SimplexVector>> {
    let joint = pomdp.enumerate_joint(actions, obs)?;
    let total: f64 = joint.iter().map(|(_, p)| p).sum();
    let m = pomdp.num_states();
    let mut marginals = vec![Array1::<f64>::zeros(m); pomdp.num_steps];
    for (seq, p) in &joint {
        for (t, &s) in seq.iter().enumerate() {
            marginals[t][s] += p / total;
        }
    }
    marginals
        .into_iter()
        .map(|v| {
            let s = v.sum();
            SimplexVector::new(v / s)
        })
        .collect()
}

/// ln Σ_{s_{1:T}} P(o_{1:τ}, s_{1:T} | actions).
pub fn exact_log_evidence(pomdp: &EnumerablePomdp, actions: &[usize], obs: &[usize]) -> Result<f64> {
    let joint = pomdp.enumerate_joint(actions, obs)?;
    Ok(joint.iter().map(|(_, p)| p).sum::<f64>().ln())
}

/// Scaled forward-backward smoother over the same floored tables; an
/// independent route to the exact marginals and log evidence.
pub fn forward_backward(
    pomdp: &EnumerablePomdp,
    actions: &[usize],
    obs: &[usize],
) -> Result<(Vec<SimplexVector>, f64)> {
    let m = pomdp.num_states();
    let len = pomdp.num_steps;
    let floor = |p: f64| p.max(PROB_FLOOR);
    let like = |t: usize, s: usize| obs.get(t).map_or(1.0, |&o| floor(pomdp.a[[o, s]]));
    let trans = |t: usize, next: usize, cur: usize| floor(pomdp.b[actions[t]][[next, cur]]);

    let mut alpha = vec![vec![0.0; m]; len];
    let mut scale = vec![0.0; len];
    for s in 0..m {
        alpha[0][s] = floor(pomdp.d[s]) * like(0, s);
    }
    for t in 0..len {
        if t > 0 {
            for next in 0..m {
                let pred: f64 = (0..m).map(|cur| trans(t - 1, next, cur) * alpha[t - 1][cur]).sum();
                alpha[t][next] = pred * like(t, next);
            }
        }
        scale[t] = alpha[t].iter().sum();
        for x in &mut alpha[t] {
            *x /= scale[t];
        }
    }
    let mut beta = vec![vec![1.0; m]; len];
    for t in (0..len.saturating_sub(1)).rev() {
        for cur in 0..m {
            beta[t][cur] = (0..m)
                .map(|next| trans(t, next, cur) * like(t + 1, next) * beta[t + 1][next])
                .sum::<f64>()
                / scale[t + 1];
        }
    }
    let posteriors = (0..len)
        .map(|t| {
            let v: Vec<f64> = (0..m).map(|s| alpha[t][s] * beta[t][s]).collect();
            let total: f64 = v.iter().sum();
            SimplexVector::from_vec(v.into_iter().map(|x| x / total).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let log_evidence = scale.iter().map(|c| c.ln()).sum();
    Ok((posteriors, log_evidence))
}

/// Policies whose ground-truth rollout ends on the goal tile.
pub fn optimal_policies(layout: &crate::environment::Layout, policies: &[crate::model::Policy]) -> Vec<usize> {
    debug_assert!(policies.iter().all(|p| p.actions().iter().all(|&a| a < NUM_ACTIONS)));
    policies
        .iter()
        .enumerate()
        .filter(|(_, p)| layout.rollout(p.actions()) == layout.goal_tile)
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_chain_is_one_hot() {
        let pomdp = EnumerablePomdp {
            a: Array2::eye(3),
            b: vec![array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]],
            d: array![1.0, 0.0, 0.0],
            num_steps: 3,
        };
        let obs = [0, 1, 2];
        let post = exact_smoothing_posterior(&pomdp, &[0, 0], &obs).unwrap();
        for (t, p) in post.iter().enumerate() {
            assert!((p.get(t) - 1.0).abs() < 1e-12);
        }
        assert!(exact_log_evidence(&pomdp, &[0, 0], &obs).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_step_is_bayes_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pomdp = EnumerablePomdp::random(3, 2, 1, 1, &mut rng);
        pomdp.num_steps = 1;
        let post = exact_smoothing_posterior(&pomdp, &[], &[1]).unwrap();
        let unnorm: Vec<f64> = (0..3).map(|s| pomdp.d[s] * pomdp.a[[1, s]]).collect();
        let total: f64 = unnorm.iter().sum();
        for s in 0..3 {
            assert!((post[0].get(s) - unnorm[s] / total).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_observation_hits_the_floor() {
        let pomdp = EnumerablePomdp {
            a: Array2::eye(2),
            b: vec![Array2::eye(2)],
            d: array![1.0, 0.0],
            num_steps: 1,
        };
        assert!(exact_log_evidence(&pomdp, &[], &[1]).unwrap() <= -36.0);
    }

    #[test]
    fn enumeration_agrees_with_forward_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pomdp = EnumerablePomdp::random(3, 3, 2, 3, &mut rng);
            let actions = [1, 0];
            let obs = pomdp.sample_observations(&actions, &mut rng);
            for tau in 1..=3 {
                let enumerated = exact_smoothing_posterior(&pomdp, &actions, &obs[..tau]).unwrap();
                let (fb, log_z) = forward_backward(&pomdp, &actions, &obs[..tau]).unwrap();
                for (p, q) in enumerated.iter().zip(&fb) {
                    for (x, y) in p.as_slice().iter().zip(q.as_slice()) {
                        assert!((x - y).abs() < 1e-12);
                    }
                }
                let ev = exact_log_evidence(&pomdp, &actions, &obs[..tau]).unwrap();
                assert!((ev - log_z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evidence_matches_exact_rational_sum() {
        use num_bigint::BigInt;
        use num_rational::BigRational;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pomdp = EnumerablePomdp::random(4, 3, 2, 4, &mut rng);
        let actions = [0, 1, 1];
        let obs = pomdp.sample_observations(&actions, &mut rng);
        let exact = |p: f64| BigRational::from_float(p.max(PROB_FLOOR)).unwrap();
        let mut total = BigRational::from_integer(BigInt::from(0));
        for (seq, _) in pomdp.enumerate_joint(&actions, &obs).unwrap() {
            let mut p = exact(pomdp.d[seq[0]]);
            for t in 1..seq.len() {
                p *= exact(pomdp.b[actions[t - 1]][[seq[t], seq[t - 1]]]);
            }
            for (t, &o) in obs.iter().enumerate() {
                p *= exact(pomdp.a[[o, seq[t]]]);
            }
            total += p;
        }
        let reference = ln_rational(&total);
        let ev = exact_log_evidence(&pomdp, &actions, &obs).unwrap();
        assert!((ev - reference).abs() < 1e-12, "{ev} vs {reference}");
    }

    /// ln of a positive rational, exact up to the final f64 rounding of the ratio.
    fn ln_rational(r: &num_rational::BigRational) -> f64 {
        let (n, d) = (r.numer(), r.denom());
        let shift = n.bits() as i64 - d.bits() as i64;
        let scaled = if shift >= 0 {
            num_rational::BigRational::new(n.clone(), d.clone() << shift as usize)
        } else {
            num_rational::BigRational::new(n.clone() << (-shift) as usize, d.clone())
        };
        let mantissa = scaled.numer().to_string().parse::<f64>().unwrap()
            / scaled.denom().to_string().parse::<f64>().unwrap();
        mantissa.ln() + shift as f64 * 2f64.ln()
    }

    #[test]
    fn size_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pomdp = EnumerablePomdp::random(5, 2, 1, 4, &mut rng);
        assert!(matches!(
            exact_log_evidence(&pomdp, &[0, 0, 0], &[0]),
            Err(AifError::TooLarge(625))
        ));
    }
}
