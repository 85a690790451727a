//! Variational message passing over policy-conditioned state beliefs and
//! the free energies those beliefs induce.
//!
//! A *track* is a `len × m` matrix whose row `t` holds the parameters of
//! Q(S_t | π) for one action sequence. Time is 0-based here: row `t` pairs
//! with observation `obs[t]` and the transition into row `t + 1` uses
//! `actions[t]`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{AifError, Result};
use crate::math::{kl_dirichlet, ln_floor, softmax_view, SimplexVector};
use crate::model::Model;

/// How a single belief vector is moved toward its optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// Closed-form minimizer: softmax of the summed messages.
    FixedPoint,
    /// Log-domain gradient step `ln s ← ln s − step · ∇F`, then softmax.
    /// A step of 1 lands on the fixed point.
    Gradient { step: f64 },
}

/// Per-policy belief tracks plus the shared past track of action-aware agents.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefEnsemble {
    pub tracks: Vec<Array2<f64>>,
    pub past: Array2<f64>,
}

impl BeliefEnsemble {
    pub fn new(num_policies: usize, num_steps: usize, num_states: usize) -> Self {
        let uniform = Array2::from_elem((num_steps, num_states), 1.0 / num_states as f64);
        Self {
            tracks: vec![uniform.clone(); num_policies],
            past: uniform,
        }
    }

    /// Every belief back to uniform.
    pub fn reset(&mut self) {
        let m = self.past.ncols();
        let u = 1.0 / m as f64;
        self.past.fill(u);
        for track in &mut self.tracks {
            track.fill(u);
        }
    }

    pub fn belief(&self, policy: usize, t: usize) -> SimplexVector {
        SimplexVector::from_array_unchecked(self.tracks[policy].row(t).to_owned())
    }
}

/// Per-step free-energy summary.
#[derive(Debug, Clone, PartialEq)]
pub struct FeRecord {
    pub policy_fes: Vec<f64>,
    pub marginal_fe: f64,
    pub kl_b: f64,
    pub kl_a: f64,
    /// 1-based step.
    pub step: usize,
}

fn check_obs(obs: &[usize], model: &Model, len: usize) -> Result<()> {
    if obs.is_empty() || obs.len() > len {
        return Err(AifError::BadTimeStep {
            t: obs.len(),
            reason: "observation count must lie in 1..=track length",
        });
    }
    let n = model.num_observations();
    match obs.iter().find(|&&o| o >= n) {
        Some(&index) => Err(AifError::OutOfRange { index, size: n }),
        None => Ok(()),
    }
}

fn check_actions(actions: &[usize], model: &Model, len: usize) -> Result<()> {
    if actions.len() + 1 < len {
        return Err(AifError::BadTimeStep {
            t: actions.len(),
            reason: "fewer actions than transitions in the track",
        });
    }
    let k = model.num_actions();
    match actions.iter().find(|&&a| a >= k) {
        Some(&index) => Err(AifError::OutOfRange { index, size: k }),
        None => Ok(()),
    }
}

/// Sum of the messages reaching row `t`: observation, forward and backward.
fn messages(track: ArrayView2<f64>, t: usize, actions: &[usize], obs: &[usize], model: &Model) -> Array1<f64> {
    let len = track.nrows();
    let mut msg = if t == 0 {
        model.ln_d().clone()
    } else {
        model.ln_b(actions[t - 1]).dot(&track.row(t - 1))
    };
    if let Some(&o) = obs.get(t) {
        msg += &model.obs_log_likelihood(o);
    }
    if t + 1 < len {
        msg += &model.ln_b(actions[t]).t().dot(&track.row(t + 1));
    }
    msg
}

/// One ascending sweep over rows `start..len` of `track`; rows before
/// `start` are held fixed.
pub fn vmp_sweep(
    track: &mut Array2<f64>,
    actions: &[usize],
    obs: &[usize],
    model: &Model,
    start: usize,
    rule: UpdateRule,
) -> Result<()> {
    let len = track.nrows();
    check_obs(obs, model, len)?;
    check_actions(actions, model, len)?;
    for t in start..len {
        let msg = messages(track.view(), t, actions, obs, model);
        let log_s = match rule {
            UpdateRule::FixedPoint => msg,
            UpdateRule::Gradient { step } => {
                let current = track.row(t).mapv(ln_floor);
                // ∇F = 1 + ln s − msg; the constant is dropped (softmax shift)
                &current - &((&current - &msg) * step)
            }
        };
        let s = softmax_view(log_s.view())?;
        track.row_mut(t).assign(&s);
    }
    Ok(())
}

/// Runs `sweeps` sweeps starting at row `start`.
pub fn infer_track(
    track: &mut Array2<f64>,
    actions: &[usize],
    obs: &[usize],
    model: &Model,
    start: usize,
    sweeps: usize,
    rule: UpdateRule,
) -> Result<()> {
    for _ in 0..sweeps {
        vmp_sweep(track, actions, obs, model, start, rule)?;
    }
    Ok(())
}

fn neg_entropy(s: ArrayView1<f64>) -> f64 {
    s.iter().filter(|&&p| p > 0.0).map(|&p| p * ln_floor(p)).sum()
}

/// Free energy of a track under `actions` given `obs` (observations up to τ):
/// Σ_t E[ln q] − Σ_{t<τ} E[ln A(o_t)] − E[ln D] − Σ_t E[ln B] over consecutive rows.
pub fn track_free_energy(track: ArrayView2<f64>, actions: &[usize], obs: &[usize], model: &Model) -> Result<f64> {
    let len = track.nrows();
    check_obs(obs, model, len)?;
    check_actions(actions, model, len)?;
    let mut fe = 0.0;
    for (t, s) in track.axis_iter(Axis(0)).enumerate() {
        fe += neg_entropy(s);
        if let Some(&o) = obs.get(t) {
            fe -= s.dot(&model.obs_log_likelihood(o));
        }
        if t == 0 {
            fe -= s.dot(model.ln_d());
        } else {
            fe -= s.dot(&model.ln_b(actions[t - 1]).dot(&track.row(t - 1)));
        }
    }
    Ok(fe)
}

/// F_π for the policy at index `policy` of the ensemble, using its own actions.
pub fn policy_conditioned_fe(
    ensemble: &BeliefEnsemble,
    obs: &[usize],
    policy: usize,
    model: &Model,
) -> Result<f64> {
    let actions = model
        .policies
        .get(policy)
        .ok_or(AifError::OutOfRange {
            index: policy,
            size: model.policies.len(),
        })?
        .actions();
    track_free_energy(ensemble.tracks[policy].view(), actions, obs, model)
}

/// Q(π)-weighted average of policy free energies, optionally plus the
/// Dirichlet KL terms of the learned parameters. Returns the record's
/// (marginal, kl_b, kl_a).
pub fn marginal_fe(fe: &[f64], q_pi: &SimplexVector, model: &Model, include_param_kl: bool) -> Result<(f64, f64, f64)> {
    if fe.len() != q_pi.len() {
        return Err(AifError::SupportMismatch {
            left: fe.len(),
            right: q_pi.len(),
        });
    }
    let avg: f64 = fe
        .iter()
        .zip(q_pi.as_slice())
        .filter(|(_, &q)| q > 0.0)
        .map(|(f, q)| f * q)
        .sum();
    if !include_param_kl {
        return Ok((avg, 0.0, 0.0));
    }
    let mut kl_b = 0.0;
    if model.learn_b {
        for (post, prior) in model.beta_post.iter().zip(&model.beta_prior) {
            kl_b += kl_dirichlet(post, prior)?;
        }
    }
    let kl_a = match &model.alpha {
        Some(alpha) => kl_dirichlet(&alpha.post, &alpha.prior)?,
        None => 0.0,
    };
    Ok((avg + kl_b + kl_a, kl_b, kl_a))
}
