//! End-of-episode Dirichlet updates for the emission and transition counts.

use ndarray::{Array1, Array2};

use crate::error::{AifError, Result};
use crate::math::DirichletCounts;

/// One belief track together with the action sequence it was inferred
/// under and the weight its evidence carries.
#[derive(Debug, Clone)]
pub struct WeightedTrack {
    pub actions: Vec<usize>,
    pub weight: f64,
    pub beliefs: Array2<f64>,
}

/// Everything the learning phase needs from a finished episode.
///
/// Action-unaware agents contribute one track per policy weighted by Q(π);
/// action-aware agents contribute the executed sequence with weight 1.
#[derive(Debug, Clone)]
pub struct EpisodeEvidence {
    pub observations: Vec<usize>,
    pub tracks: Vec<WeightedTrack>,
}

impl EpisodeEvidence {
    pub fn num_steps(&self) -> usize {
        self.observations.len()
    }

    fn check(&self) -> Result<()> {
        let t = self.num_steps();
        if self.tracks.is_empty() {
            return Err(AifError::NoPolicies);
        }
        let total: f64 = self.tracks.iter().map(|tr| tr.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AifError::NotSimplex(format!("track weights sum to {total}")));
        }
        for tr in &self.tracks {
            if tr.beliefs.nrows() != t {
                return Err(AifError::ShapeMismatch {
                    left: (tr.beliefs.nrows(), tr.beliefs.ncols()),
                    right: (t, tr.beliefs.ncols()),
                });
            }
            if tr.actions.len() + 1 < t {
                return Err(AifError::BadTimeStep {
                    t: tr.actions.len(),
                    reason: "fewer actions than transitions in the episode",
                });
            }
        }
        Ok(())
    }

    /// Policy-marginal belief Q̄(S_t).
    pub fn marginal(&self, t: usize) -> Array1<f64> {
        let m = self.tracks[0].beliefs.ncols();
        let mut out = Array1::zeros(m);
        for tr in &self.tracks {
            out.scaled_add(tr.weight, &tr.beliefs.row(t));
        }
        out
    }
}

/// alpha[o_t, i] += Q̄(S_t = i) for every step of the episode.
pub fn update_alpha(alpha: &mut DirichletCounts, evidence: &EpisodeEvidence) -> Result<()> {
    evidence.check()?;
    let (rows, cols) = alpha.shape();
    for (t, &o) in evidence.observations.iter().enumerate() {
        if o >= rows {
            return Err(AifError::OutOfRange { index: o, size: rows });
        }
        let q = evidence.marginal(t);
        if q.len() != cols {
            return Err(AifError::SupportMismatch {
                left: q.len(),
                right: cols,
            });
        }
        for (i, &p) in q.iter().enumerate() {
            alpha.add_evidence(o, i, p);
        }
    }
    Ok(())
}

/// beta^{a_{t−1}}[j, i] += w · s_t[j] · s_{t−1}[i] for every track and step.
pub fn update_beta(beta: &mut [DirichletCounts], evidence: &EpisodeEvidence) -> Result<()> {
    evidence.check()?;
    for tr in evidence.tracks.iter().filter(|tr| tr.weight > 0.0) {
        for t in 1..evidence.num_steps() {
            let a = tr.actions[t - 1];
            let size = beta.len();
            let counts = beta.get_mut(a).ok_or(AifError::OutOfRange { index: a, size })?;
            let cur = tr.beliefs.row(t);
            let prev = tr.beliefs.row(t - 1);
            for (j, &sj) in cur.iter().enumerate() {
                if sj == 0.0 {
                    continue;
                }
                for (i, &si) in prev.iter().enumerate() {
                    counts.add_evidence(j, i, tr.weight * sj * si);
                }
            }
        }
    }
    Ok(())
}
