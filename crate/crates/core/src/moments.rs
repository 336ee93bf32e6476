//! Exact moments of weighted sums of independent Bernoulli variables.
//!
//! For `S = Σ_m w_m Z_m` with `Z_m ~ Bernoulli(p_m)` the raw moments are
//! built edge by edge with the binomial recurrence
//!
//! ```text
//! E[S_k^j] = Σ_{r=0}^{j} C(j, r) E[S_{k-1}^{j-r}] w_k^r E[Z_k^r]
//! ```
//!
//! which costs `O(M J²)`. Under the default [`MomentConvention::Bernoulli`]
//! `E[Z^r] = p` for every `r ≥ 1`. [`MomentConvention::LiteralPower`] uses
//! `E[Z^r] = p^r` instead; it is kept only to measure how far that variant
//! lands from the exact expectation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::EigenSystem;
use crate::perturbation::{FirstOrderCorrections, PerturbationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentConvention {
    /// `E[Z^r] = p` (idempotent indicator).
    #[default]
    Bernoulli,
    /// `E[Z^r] = p^r`.
    LiteralPower,
}

impl MomentConvention {
    fn indicator_moment(self, p: f64, r: usize) -> f64 {
        match (self, r) {
            (_, 0) => 1.0,
            (MomentConvention::Bernoulli, _) => p,
            (MomentConvention::LiteralPower, r) => p.powi(r as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBernoulliSum {
    weights: Vec<f64>,
    probs: Vec<f64>,
}

impl WeightedBernoulliSum {
    pub fn new(weights: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if weights.len() != probs.len() {
            return Err(Error::LengthMismatch(weights.len(), probs.len()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidModel(format!("probability {p} out of range")));
        }
        Ok(Self { weights, probs })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.probs).map(|(w, p)| w * p).sum()
    }
}

/// `[E[S⁰], E[S¹], …, E[S^J]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable(pub Vec<f64>);

impl MomentTable {
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Pascal's triangle up to row `n`.
pub fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut row = vec![1.0; k + 1];
        for j in 1..k {
            row[j] = rows[k - 1][j - 1] + rows[k - 1][j];
        }
        rows.push(row);
    }
    rows
}

pub fn moments(sum: &WeightedBernoulliSum, max_order: usize) -> MomentTable {
    moments_with(sum, max_order, MomentConvention::Bernoulli)
}

pub fn moments_with(sum: &WeightedBernoulliSum, max_order: usize, convention: MomentConvention) -> MomentTable {
    let binom = binomial_table(max_order);
    let mut table = vec![0.0; max_order + 1];
    table[0] = 1.0;
    let mut next = vec![0.0; max_order + 1];
    let mut wpow = vec![1.0; max_order + 1];
    for (&w, &p) in sum.weights.iter().zip(&sum.probs) {
        if w == 0.0 || p == 0.0 {
            continue;
        }
        for r in 1..=max_order {
            wpow[r] = wpow[r - 1] * w;
        }
        for j in 0..=max_order {
            let mut acc = 0.0;
            for r in 0..=j {
                acc += binom[j][r] * table[j - r] * wpow[r] * convention.indicator_moment(p, r);
            }
            next[j] = acc;
        }
        std::mem::swap(&mut table, &mut next);
    }
    MomentTable(table)
}

/// `E[A B]` for two weighted sums. With `shared_probs` both sums are over the
/// same indicators, so `E[Z_m²] = p_m` contributes on the diagonal; without
/// it the sums are treated as independent.
pub fn mixed_expectation(a: &WeightedBernoulliSum, b: &WeightedBernoulliSum, shared_probs: bool) -> Result<f64> {
    if !shared_probs {
        return Ok(a.mean() * b.mean());
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.probs != b.probs {
        return Err(Error::InvalidModel("shared indicators must carry identical probabilities".into()));
    }
    let diag: f64 = (0..a.len()).map(|m| a.weights[m] * b.weights[m] * a.probs[m] * (1.0 - a.probs[m])).sum();
    Ok(a.mean() * b.mean() + diag)
}

/// Expected perturbed eigenvalue powers under the first-order model.
#[derive(Debug, Clone)]
pub struct PowerSums {
    /// `per_index[(i, k)] = E[λ̃_i^k]`.
    pub per_index: DMatrix<f64>,
    /// `totals[k] = E[Σ_i λ̃_i^k]`.
    pub totals: DVector<f64>,
}

/// `E[λ̃_i^k] = Σ_j C(k, j) λ_i^{k-j} E[(δλ_i)^j]` with
/// `δλ_i = Σ_m σ_m q_{i,m} Z_m`, for `k = 0..=max_power`.
pub fn expected_power_sums(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    max_power: usize,
    convention: MomentConvention,
) -> PowerSums {
    let n = eig.dim();
    let probs = model.probs();
    let binom = binomial_table(max_power);
    let mut per_index = DMatrix::zeros(n, max_power + 1);
    for i in 0..n {
        let weights: Vec<f64> = (0..corr.num_edges()).map(|m| corr.sigma[m] * corr.q[(i, m)]).collect();
        let sum = WeightedBernoulliSum { weights, probs: probs.clone() };
        let mom = moments_with(&sum, max_power, convention);
        let lam = eig.eigenvalues[i];
        for k in 0..=max_power {
            // Horner in λ_i over the coefficients C(k, j) E[δλ^j], j = k - t.
            let mut acc = 0.0;
            for t in (0..=k).rev() {
                let j = k - t;
                acc = acc * lam + binom[k][j] * mom.get(j);
            }
            per_index[(i, k)] = acc;
        }
    }
    let totals = DVector::from_iterator(max_power + 1, per_index.column_iter().map(|c| c.sum()));
    PowerSums { per_index, totals }
}

/// A quadratic polynomial `c + aᵀz + zᵀCz` in independent Bernoulli
/// indicators, reduced to multilinear form on construction.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    constant: f64,
    linear: DVector<f64>,
    /// Symmetric with zero diagonal.
    pairwise: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(constant: f64, linear: DVector<f64>, quadratic: &DMatrix<f64>) -> Self {
        let m = linear.len();
        let mut pairwise = (quadratic + quadratic.transpose()) * 0.5;
        let mut linear = linear;
        for k in 0..m {
            linear[k] += quadratic[(k, k)];
            pairwise[(k, k)] = 0.0;
        }
        Self { constant, linear, pairwise }
    }

    pub fn mean(&self, probs: &DVector<f64>) -> f64 {
        self.constant + self.linear.dot(probs) + probs.dot(&(&self.pairwise * probs))
    }

    pub fn second_moment(&self, probs: &DVector<f64>) -> f64 {
        let c = self.constant;
        let a = &self.linear;
        let cm = &self.pairwise;
        let m = a.len();
        let cp = cm * probs;
        let ap = a.dot(probs);
        let pcp = probs.dot(&cp);

        let mut lin_var = 0.0;
        let mut lin_quad = 0.0;
        let mut one_overlap = 0.0;
        let mut two_overlap = 0.0;
        for k in 0..m {
            let pk = probs[k];
            let rk = 1.0 - pk;
            lin_var += a[k] * a[k] * pk * rk;
            lin_quad += a[k] * rk * pk * cp[k];
            let mut sq = 0.0;
            for l in 0..m {
                let c2 = cm[(k, l)] * cm[(k, l)];
                sq += c2 * probs[l] * probs[l];
                two_overlap += c2 * pk * probs[l] * (1.0 - pk * probs[l]);
            }
            one_overlap += pk * rk * (cp[k] * cp[k] - sq);
        }
        let linear_part = c * c + 2.0 * c * ap + ap * ap + lin_var;
        let cross = c * pcp + ap * pcp + 2.0 * lin_quad;
        let quad = pcp * pcp + 4.0 * one_overlap + 2.0 * two_overlap;
        linear_part + 2.0 * cross + quad
    }

    pub fn evaluate(&self, z: &[bool]) -> f64 {
        let mut v = self.constant;
        for k in 0..z.len() {
            if !z[k] {
                continue;
            }
            v += self.linear[k];
            for l in 0..z.len() {
                if z[l] {
                    v += self.pairwise[(k, l)];
                }
            }
        }
        v
    }
}
