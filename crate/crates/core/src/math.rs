//! Numerically stable primitives for categorical and Dirichlet distributions.
//!
//! Every probability that goes through a logarithm is first floored at
//! [`PROB_FLOOR`], so deterministic models (exact zeros) stay finite.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{AifError, Result};

/// Smallest probability allowed inside a logarithm.
pub const PROB_FLOOR: f64 = 1e-16;

const SIMPLEX_TOL: f64 = 1e-9;

/// Natural log of a probability, floored at [`PROB_FLOOR`].
#[inline]
pub fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Element-wise [`ln_floor`] of a matrix.
pub fn ln_floor_matrix(m: ArrayView2<f64>) -> Array2<f64> {
    m.mapv(ln_floor)
}

/// Parameters of a categorical distribution over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Array1<f64>);

impl SimplexVector {
    pub fn new(probs: Array1<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(AifError::NotSimplex("empty support".into()));
        }
        for (index, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(AifError::NonFinite { index, value: p });
            }
            if p < 0.0 {
                return Err(AifError::NotSimplex(format!("entry {index} is negative ({p})")));
            }
        }
        let total = probs.sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(AifError::NotSimplex(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn from_vec(probs: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = Array1::zeros(n);
        probs[index] = 1.0;
        Self(probs)
    }

    /// Skips validation; callers guarantee the simplex invariant.
    pub(crate) fn from_array_unchecked(probs: Array1<f64>) -> Self {
        Self(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn into_array(self) -> Array1<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(self.0.view())
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Possibly unnormalized natural-log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights(Array1<f64>);

impl LogWeights {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        check_finite(values.view())?;
        Ok(Self(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(values))
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

/// Dirichlet concentration parameters, one column per conditioning value.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletCounts(Array2<f64>);

impl DirichletCounts {
    pub fn new(counts: Array2<f64>) -> Result<Self> {
        for ((row, col), &value) in counts.indexed_iter() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(AifError::NonPositiveCount { row, col, value });
            }
        }
        Ok(Self(counts))
    }

    pub fn counts(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }

    /// Adds nonnegative evidence; positivity is preserved.
    pub(crate) fn add_evidence(&mut self, row: usize, col: usize, amount: f64) {
        debug_assert!(amount >= 0.0);
        self.0[[row, col]] += amount;
    }

    /// Column-normalized Dirichlet means.
    pub fn mean(&self) -> Array2<f64> {
        let totals = self.0.sum_axis(Axis(0));
        let mut m = self.0.clone();
        for (mut col, total) in m.axis_iter_mut(Axis(1)).zip(totals.iter()) {
            col /= *total;
        }
        m
    }
}

fn check_finite(v: ArrayView1<f64>) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(AifError::NonFinite {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(w: &LogWeights) -> Result<SimplexVector> {
    softmax_view(w.values()).map(SimplexVector::from_array_unchecked)
}

/// Softmax of a raw view; errors on non-finite input.
pub(crate) fn softmax_view(w: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_finite(w)?;
    let max = w.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out = w.mapv(|x| (x - max).exp());
    let total = out.sum();
    out /= total;
    Ok(out)
}

/// Σ p ln(p / q), with 0 ln 0 = 0 and q floored.
pub fn kl_categorical(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    kl_view(p.probs(), q.probs())
}

pub(crate) fn kl_view(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(AifError::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let kl = p
        .iter()
        .zip(q.iter())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (ln_floor(pi) - ln_floor(qi)))
        .sum::<f64>();
    // Rounding can push an exact zero slightly negative.
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
pub fn entropy(p: &SimplexVector) -> f64 {
    entropy_view(p.probs())
}

pub(crate) fn entropy_view(p: ArrayView1<f64>) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Digamma ψ(x) for x > 0.
///
/// Recurrence ψ(x) = ψ(x + 1) − 1/x lifts the argument to x ≥ 6, where a
/// six-term asymptotic series is accurate to about 1e-11.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(AifError::Domain(x));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

/// ln Γ(x) for x > 0 via upward recurrence and Stirling's series.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(AifError::Domain(x));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    let half_ln_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(shift + (x - 0.5) * x.ln() - x + half_ln_two_pi + series)
}

/// E[ln θ] under Dir(counts), column-wise: ψ(c_ij) − ψ(Σ_k c_kj).
pub fn expected_log_dirichlet(counts: &DirichletCounts) -> Result<Array2<f64>> {
    let c = counts.counts();
    let totals = c.sum_axis(Axis(0));
    let mut out = Array2::zeros(c.dim());
    for ((i, j), &value) in c.indexed_iter() {
        out[[i, j]] = digamma(value)? - digamma(totals[j])?;
    }
    Ok(out)
}

/// Σ over columns of KL(Dir(post_j) ‖ Dir(prior_j)).
pub fn kl_dirichlet(post: &DirichletCounts, prior: &DirichletCounts) -> Result<f64> {
    if post.shape() != prior.shape() {
        return Err(AifError::ShapeMismatch {
            left: post.shape(),
            right: prior.shape(),
        });
    }
    let mut total = 0.0;
    for (a, b) in post
        .counts()
        .axis_iter(Axis(1))
        .zip(prior.counts().axis_iter(Axis(1)))
    {
        let a0 = a.sum();
        let b0 = b.sum();
        let psi_a0 = digamma(a0)?;
        let mut kl = ln_gamma(a0)? - ln_gamma(b0)?;
        for (&ai, &bi) in a.iter().zip(b.iter()) {
            kl += ln_gamma(bi)? - ln_gamma(ai)? + (ai - bi) * (digamma(ai)? - psi_a0);
        }
        total += kl;
    }
    Ok(total.max(0.0))
}
