//! The agent's generative model: emission and transition parameters with
//! their Dirichlet counts, initial-state prior, preferences and policies.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Layout, NUM_ACTIONS};
use crate::error::{AifError, Result};
use crate::math::{
    expected_log_dirichlet, ln_floor, ln_floor_matrix, softmax, DirichletCounts, LogWeights,
    SimplexVector,
};

/// Fixed-length, time-indexed action sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(AifError::OutOfRange {
                index: bad,
                size: num_actions,
            });
        }
        Ok(Self(actions))
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Action executed at 0-based position `t`.
    pub fn action_at(&self, t: usize) -> usize {
        self.0[t]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// The first `limit` action sequences of length `horizon` in lexicographic order.
pub fn enumerate_policies(num_actions: usize, horizon: usize, limit: usize) -> Result<Vec<Policy>> {
    let available = (num_actions as u64)
        .checked_pow(horizon as u32)
        .filter(|&n| n <= usize::MAX as u64)
        .ok_or(AifError::PolicyLimit {
            limit,
            available: usize::MAX,
        })? as usize;
    if limit > available {
        return Err(AifError::PolicyLimit { limit, available });
    }
    Ok((0..limit)
        .map(|mut code| {
            let mut actions = vec![0; horizon];
            for slot in actions.iter_mut().rev() {
                *slot = code % num_actions;
                code /= num_actions;
            }
            Policy(actions)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefLoc {
    /// The goal tile is preferred at every future step.
    AllGoal,
}

impl std::str::FromStr for PrefLoc {
    type Err = AifError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_goal" => Ok(PrefLoc::AllGoal),
            other => Err(AifError::UnknownPreference(other.to_string())),
        }
    }
}

impl fmt::Display for PrefLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefLoc::AllGoal => f.write_str("all_goal"),
        }
    }
}

/// Preferred state distribution: softmax of `precision` at the goal, 0 elsewhere.
pub fn preference_vector(layout: &Layout, pref_loc: PrefLoc, precision: f64) -> Result<SimplexVector> {
    match pref_loc {
        PrefLoc::AllGoal => {
            let mut log_pref = Array1::zeros(layout.num_tiles);
            log_pref[layout.goal_tile] = precision;
            softmax(&LogWeights::new(log_pref)?)
        }
    }
}

/// Column-normalized Dirichlet means, one matrix per action.
pub fn expected_b(beta: &[DirichletCounts]) -> Vec<Array2<f64>> {
    beta.iter().map(DirichletCounts::mean).collect()
}

/// W = ½(1/c − 1/c₀) per entry, c₀ the column total: the closed-form
/// expected information gain weight of one more count in that cell.
pub fn novelty_weights(counts: &DirichletCounts) -> Array2<f64> {
    let c = counts.counts();
    let totals = c.sum_axis(Axis(0));
    Array2::from_shape_fn(c.dim(), |(i, j)| 0.5 * (1.0 / c[[i, j]] - 1.0 / totals[j]))
}

/// Knobs of [`init_model`] that come from the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub num_steps: usize,
    pub num_policies: usize,
    pub learn_a: bool,
    pub learn_b: bool,
    pub pref_loc: PrefLoc,
    pub pref_precision: f64,
}

impl ModelSpec {
    pub fn horizon(&self) -> usize {
        self.num_steps - 1
    }
}

/// Prior and posterior Dirichlet counts over the emission matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionCounts {
    pub prior: DirichletCounts,
    pub post: DirichletCounts,
}

/// Lower and upper bound of the uniform draw for initial transition counts.
pub const BETA_INIT_RANGE: (f64, f64) = (0.1, 1.1);

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// `A[observation, state]`.
    pub a: Array2<f64>,
    /// Present only when the emission map is learned.
    pub alpha: Option<EmissionCounts>,
    /// `B[action][next, current]`.
    pub b: Vec<Array2<f64>>,
    pub beta_prior: Vec<DirichletCounts>,
    pub beta_post: Vec<DirichletCounts>,
    /// Initial-state prior.
    pub d: SimplexVector,
    /// Preferred state distribution.
    pub c: SimplexVector,
    pub policies: Vec<Policy>,
    pub horizon: usize,
    pub num_steps: usize,
    pub learn_a: bool,
    pub learn_b: bool,
    log_obs: Array2<f64>,
    ln_b: Vec<Array2<f64>>,
    ln_d: Array1<f64>,
    novelty_a: Option<Array2<f64>>,
    novelty_b: Vec<Array2<f64>>,
}

impl Model {
    pub fn num_states(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_observations(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.b.len()
    }

    /// Log-likelihood of each state for observation `o`: a row of ln A, or of
    /// the expected log emission matrix when A is learned.
    pub fn obs_log_likelihood(&self, o: usize) -> ndarray::ArrayView1<'_, f64> {
        self.log_obs.row(o)
    }

    /// Floored ln B for action `a`.
    pub fn ln_b(&self, a: usize) -> &Array2<f64> {
        &self.ln_b[a]
    }

    /// Floored ln D.
    pub fn ln_d(&self) -> &Array1<f64> {
        &self.ln_d
    }

    /// Recomputes A and B from the posterior counts and rebuilds the log caches.
    pub fn refresh(&mut self) -> Result<()> {
        if let Some(alpha) = &self.alpha {
            self.a = alpha.post.mean();
            self.log_obs = expected_log_dirichlet(&alpha.post)?;
        } else {
            self.log_obs = ln_floor_matrix(self.a.view());
        }
        if self.learn_b {
            self.b = expected_b(&self.beta_post);
        }
        self.ln_b = self.b.iter().map(|m| ln_floor_matrix(m.view())).collect();
        self.ln_d = self.d.probs().mapv(ln_floor);
        self.novelty_a = self.alpha.as_ref().map(|alpha| novelty_weights(&alpha.post));
        self.novelty_b = if self.learn_b {
            self.beta_post.iter().map(novelty_weights).collect()
        } else {
            Vec::new()
        };
        Ok(())
    }

    /// Novelty weights of the emission counts, when A is learned.
    pub fn novelty_a(&self) -> Option<&Array2<f64>> {
        self.novelty_a.as_ref()
    }

    /// Novelty weights of the transition counts for action `a`, when B is learned.
    pub fn novelty_b(&self, a: usize) -> Option<&Array2<f64>> {
        self.novelty_b.get(a)
    }

    /// Replaces the transition model with known matrices backed by
    /// `concentration` pseudo-counts per unit of probability.
    pub fn inject_transitions(&mut self, b: &[Array2<f64>], concentration: f64) -> Result<()> {
        let counts = b
            .iter()
            .map(|m| DirichletCounts::new(m.mapv(|p| p * concentration + 1e-3)))
            .collect::<Result<Vec<_>>>()?;
        self.beta_prior = counts.clone();
        self.beta_post = counts;
        self.b = expected_b(&self.beta_post);
        self.refresh()
    }

    /// Checks the model invariants: stochastic columns and B consistent with β.
    pub fn check_invariants(&self) -> Result<()> {
        let columns_ok = |m: &Array2<f64>, what: &str| -> Result<()> {
            for (j, col) in m.columns().into_iter().enumerate() {
                SimplexVector::new(col.to_owned())
                    .map_err(|e| AifError::NotSimplex(format!("{what} column {j}: {e}")))?;
            }
            Ok(())
        };
        columns_ok(&self.a, "A")?;
        for (a, m) in self.b.iter().enumerate() {
            columns_ok(m, &format!("B[{a}]"))?;
        }
        if self.learn_b {
            for (m, beta) in self.b.iter().zip(&self.beta_post) {
                let mean = beta.mean();
                if m.iter().zip(mean.iter()).any(|(x, y)| (x - y).abs() > 1e-12) {
                    return Err(AifError::NotSimplex("B differs from normalized beta".into()));
                }
            }
        }
        let max_policies = self.num_actions().pow(self.horizon as u32);
        if self.policies.len() > max_policies {
            return Err(AifError::PolicyLimit {
                limit: self.policies.len(),
                available: max_policies,
            });
        }
        Ok(())
    }
}

/// Builds a fresh agent model for `layout`.
///
/// The emission map is the known ground-truth `emission`; transition counts
/// are drawn i.i.d. from U[0.1, 1.1) with `seed`, and B is their normalized
/// mean. When the emission map is learned its counts are drawn the same way
/// after the transition counts.
pub fn init_model(layout: &Layout, emission: &Array2<f64>, spec: &ModelSpec, seed: u64) -> Result<Model> {
    if spec.num_steps < 2 {
        return Err(AifError::Config("num_steps must be at least 2".into()));
    }
    let m = layout.num_tiles;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = BETA_INIT_RANGE;
    let mut draw = |rows: usize| -> Result<DirichletCounts> {
        DirichletCounts::new(Array2::from_shape_fn((rows, m), |_| rng.random_range(lo..hi)))
    };
    let beta_prior = (0..NUM_ACTIONS).map(|_| draw(m)).collect::<Result<Vec<_>>>()?;
    let alpha = if spec.learn_a {
        let prior = draw(emission.nrows())?;
        Some(EmissionCounts {
            post: prior.clone(),
            prior,
        })
    } else {
        None
    };
    let mut model = Model {
        a: emission.clone(),
        alpha,
        b: expected_b(&beta_prior),
        beta_post: beta_prior.clone(),
        beta_prior,
        d: SimplexVector::one_hot(m, layout.start_tile),
        c: preference_vector(layout, spec.pref_loc, spec.pref_precision)?,
        policies: enumerate_policies(NUM_ACTIONS, spec.horizon(), spec.num_policies)?,
        horizon: spec.horizon(),
        num_steps: spec.num_steps,
        learn_a: spec.learn_a,
        learn_b: spec.learn_b,
        log_obs: Array2::zeros((0, 0)),
        ln_b: Vec::new(),
        ln_d: Array1::zeros(0),
        novelty_a: None,
        novelty_b: Vec::new(),
    };
    model.refresh()?;
    Ok(model)
}

/// Builds a model directly from explicit tables; used for small hand-made
/// instances. `a` and every `b` matrix must be column-stochastic.
pub fn model_from_tables(
    a: Array2<f64>,
    b: Vec<Array2<f64>>,
    d: SimplexVector,
    c: SimplexVector,
    policies: Vec<Policy>,
    num_steps: usize,
) -> Result<Model> {
    let beta = b
        .iter()
        .map(|m| DirichletCounts::new(m.mapv(|p| p.max(1e-12))))
        .collect::<Result<Vec<_>>>()?;
    let mut model = Model {
        a,
        alpha: None,
        b,
        beta_post: beta.clone(),
        beta_prior: beta,
        d,
        c,
        horizon: num_steps - 1,
        policies,
        num_steps,
        learn_a: false,
        learn_b: false,
        log_obs: Array2::zeros((0, 0)),
        ln_b: Vec::new(),
        ln_d: Array1::zeros(0),
        novelty_a: None,
        novelty_b: Vec::new(),
    };
    model.refresh()?;
    model.check_invariants()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_layout, LayoutName};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn spec(num_steps: usize, num_policies: usize) -> ModelSpec {
        ModelSpec {
            num_steps,
            num_policies,
            learn_a: false,
            learn_b: true,
            pref_loc: PrefLoc::AllGoal,
            pref_precision: 4.0,
        }
    }

    #[test]
    fn policy_enumeration() {
        assert_eq!(enumerate_policies(4, 3, 64).unwrap().len(), 64);
        assert_eq!(enumerate_policies(4, 4, 256).unwrap().len(), 256);
        let base = enumerate_policies(2, 1, 2).unwrap();
        assert_eq!(base, vec![Policy(vec![0]), Policy(vec![1])]);
        let some = enumerate_policies(4, 3, 10).unwrap();
        assert_eq!(some.len(), 10);
        assert!(some.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            enumerate_policies(4, 3, 65),
            Err(AifError::PolicyLimit { limit: 65, available: 64 })
        ));
    }

    #[test]
    fn preference_examples() {
        let (grid, _) = build_layout(LayoutName::Gridw9);
        let flat = preference_vector(&grid, PrefLoc::AllGoal, 0.0).unwrap();
        assert!(flat.as_slice().iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        let c = preference_vector(&grid, PrefLoc::AllGoal, 4.0).unwrap();
        let e4 = 4f64.exp();
        assert_abs_diff_eq!(c.get(8), e4 / (e4 + 8.0), epsilon = 1e-14);
        assert_abs_diff_eq!(c.get(8), 0.8722, epsilon = 1e-4);
        assert!((0..8).all(|i| c.get(i) == c.get(0)));
        for precision in [0.1, 1.0, 7.5] {
            let c = preference_vector(&grid, PrefLoc::AllGoal, precision).unwrap();
            assert_eq!(c.argmax(), grid.goal_tile);
        }
        assert!("somewhere".parse::<PrefLoc>().is_err());
    }

    #[test]
    fn expected_b_examples() {
        let beta = DirichletCounts::new(array![[1.0, 3.0], [1.0, 1.0], [1.0, 0.0 + 1e-9]]).unwrap();
        let b = &expected_b(std::slice::from_ref(&beta))[0];
        assert!(b.column(0).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let beta = DirichletCounts::new(array![[3.0], [1.0]]).unwrap();
        let b = &expected_b(&[beta])[0];
        assert_eq!(b.column(0).to_vec(), vec![0.75, 0.25]);
        let shifted = DirichletCounts::new(Array2::from_elem((3, 1), 1.0 + 5.0)).unwrap();
        let b = &expected_b(&[shifted])[0];
        assert!(b.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn init_model_contract() {
        let (layout, maps) = build_layout(LayoutName::Tmaze4);
        let model = init_model(&layout, &maps.emission, &spec(4, 64), 7).unwrap();
        assert_eq!(model.a, Array2::<f64>::eye(5));
        assert_eq!(model.policies.len(), 64);
        assert_eq!(model.horizon, 3);
        assert_eq!(model.d.argmax(), 4);
        for b in &model.b {
            for col in b.columns() {
                assert_abs_diff_eq!(col.sum(), 1.0, epsilon = 1e-12);
            }
        }
        for beta in &model.beta_prior {
            assert!(beta.counts().iter().all(|&x| (0.1..1.1).contains(&x)));
        }
        model.check_invariants().unwrap();
        let again = init_model(&layout, &maps.emission, &spec(4, 64), 7).unwrap();
        assert_eq!(model, again);
        let other = init_model(&layout, &maps.emission, &spec(4, 64), 8).unwrap();
        assert_ne!(model.beta_prior, other.beta_prior);
    }

    #[test]
    fn learned_emission_uses_digamma_rows() {
        let (layout, maps) = build_layout(LayoutName::Tmaze4);
        let mut s = spec(4, 64);
        s.learn_a = true;
        let model = init_model(&layout, &maps.emission, &s, 1).unwrap();
        let alpha = model.alpha.as_ref().unwrap();
        let expected = expected_log_dirichlet(&alpha.post).unwrap();
        assert_eq!(model.obs_log_likelihood(2).to_owned(), expected.row(2).to_owned());
        model.check_invariants().unwrap();
    }
}
