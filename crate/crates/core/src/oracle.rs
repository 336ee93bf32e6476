//! Ground truth: exact perturbed spectra, exhaustive sums over outcomes and
//! Monte-Carlo estimates.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{eigendecompose, EigenSystem, Graph, Laplacian};
use crate::perturbation::{
    approx_perturbed_eigs, enumerate_support, first_order_eigen, sample_realization, PerturbationModel,
    PerturbationRealization, DEFAULT_ENUMERATION_CAP,
};

/// Outcomes handled per work unit. Fixed so that results do not depend on
/// the thread count.
const CHUNK: u64 = 256;

/// SplitMix64 finalizer applied to `master + stream`, giving independent
/// seeds for parallel streams.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Enumerate,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Mean with per-component standard error. The error is zero for exact
/// enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub mean: DVector<f64>,
    pub stderr: DVector<f64>,
    pub realizations: u64,
}

#[derive(Debug, Clone)]
struct Welford {
    count: u64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Welford {
    fn empty(dim: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(dim), m2: DVector::zeros(dim) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        if self.count == 0 && self.mean.len() != x.len() {
            *self = Self::empty(x.len());
        }
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }

    fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = (self.count + other.count) as f64;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (other.count as f64 / n);
        let m2 = self.m2 + other.m2 + delta.component_mul(&delta) * (self.count as f64 * other.count as f64 / n);
        Self { count: self.count + other.count, mean, m2 }
    }

    fn finish(self) -> Expectation {
        let stderr = if self.count > 1 {
            let n = self.count as f64;
            self.m2.map(|v| (v.max(0.0) / (n - 1.0) / n).sqrt())
        } else {
            DVector::zeros(self.mean.len())
        };
        Expectation { mean: self.mean, stderr, realizations: self.count }
    }
}

/// `E[f(Z)]` over the perturbation indicators.
pub fn expectation_over_realizations<F>(model: &PerturbationModel, functional: F, method: Method) -> Result<Expectation>
where
    F: Fn(&PerturbationRealization) -> Result<DVector<f64>> + Sync,
{
    match method {
        Method::Enumerate => {
            let support = enumerate_support(model, DEFAULT_ENUMERATION_CAP)?;
            let total = support.total();
            let chunks: Vec<Result<Option<DVector<f64>>>> = (0..total.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut acc: Option<DVector<f64>> = None;
                    for k in c * CHUNK..((c + 1) * CHUNK).min(total) {
                        let (real, w) = support.at(k);
                        if w == 0.0 {
                            continue;
                        }
                        let v = functional(&real)? * w;
                        acc = Some(match acc {
                            Some(a) => a + v,
                            None => v,
                        });
                    }
                    Ok(acc)
                })
                .collect();
            let mut mean: Option<DVector<f64>> = None;
            for chunk in chunks {
                if let Some(v) = chunk? {
                    mean = Some(match mean {
                        Some(a) => a + v,
                        None => v,
                    });
                }
            }
            let mean = mean.unwrap_or_else(|| DVector::zeros(0));
            let stderr = DVector::zeros(mean.len());
            Ok(Expectation { mean, stderr, realizations: total })
        }
        Method::MonteCarlo { samples, seed } => {
            let samples = samples.max(1) as u64;
            let chunks: Vec<Result<Welford>> = (0..samples.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut acc = Welford::empty(0);
                    for k in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, k));
                        acc.push(&functional(&sample_realization(model, &mut rng))?);
                    }
                    Ok(acc)
                })
                .collect();
            let mut acc = Welford::empty(0);
            for chunk in chunks {
                acc = acc.merge(chunk?);
            }
            Ok(acc.finish())
        }
    }
}

/// Scalar convenience wrapper returning `(mean, stderr)`.
pub fn expectation_scalar<F>(model: &PerturbationModel, functional: F, method: Method) -> Result<(f64, f64)>
where
    F: Fn(&PerturbationRealization) -> Result<f64> + Sync,
{
    let e = expectation_over_realizations(model, |r| Ok(DVector::from_element(1, functional(r)?)), method)?;
    Ok((e.mean[0], e.stderr[0]))
}

/// Laplacian of the graph with the realization's edges toggled.
pub fn exact_perturbed_laplacian(
    graph: &Graph,
    model: &PerturbationModel,
    real: &PerturbationRealization,
) -> Result<Laplacian> {
    Ok(model.apply(graph, real)?.laplacian())
}

/// Exact spectrum of the perturbed graph, with each eigenvector flipped to
/// have a non-negative inner product with its nominal counterpart.
pub fn exact_perturbed_eigs(
    graph: &Graph,
    model: &PerturbationModel,
    real: &PerturbationRealization,
    nominal: &EigenSystem,
) -> Result<EigenSystem> {
    let mut eig = eigendecompose(&exact_perturbed_laplacian(graph, model, real)?);
    align_signs(&mut eig, nominal);
    Ok(eig)
}

pub fn align_signs(eig: &mut EigenSystem, reference: &EigenSystem) {
    for i in 0..eig.dim() {
        if reference.eigenvectors.column(i).dot(&eig.eigenvectors.column(i)) < 0.0 {
            eig.eigenvectors.column_mut(i).neg_mut();
        }
    }
}

/// Closed form against oracle for one quantity. Values are flattened in
/// column-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub shape: (usize, usize),
    pub closed_form_value: Vec<f64>,
    pub oracle_value: Vec<f64>,
    /// Largest entrywise difference.
    pub abs_error: f64,
    /// Euclidean norm of the difference over that of the oracle.
    pub rel_error: f64,
    pub realizations_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl OracleReport {
    pub fn compare(
        quantity: impl Into<String>,
        shape: (usize, usize),
        closed_form: &[f64],
        oracle: &[f64],
        realizations_used: u64,
    ) -> Self {
        assert_eq!(closed_form.len(), oracle.len(), "shape mismatch in oracle comparison");
        let mut abs_error = 0.0f64;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for (a, b) in closed_form.iter().zip(oracle) {
            abs_error = abs_error.max((a - b).abs());
            diff2 += (a - b) * (a - b);
            norm2 += b * b;
        }
        let rel_error = if diff2 == 0.0 { 0.0 } else { (diff2 / norm2.max(f64::MIN_POSITIVE)).sqrt() };
        Self {
            quantity: quantity.into(),
            shape,
            closed_form_value: closed_form.to_vec(),
            oracle_value: oracle.to_vec(),
            abs_error,
            rel_error,
            realizations_used,
            tolerance: None,
        }
    }

    pub fn scalar(quantity: impl Into<String>, closed_form: f64, oracle: f64, realizations_used: u64) -> Self {
        Self::compare(quantity, (1, 1), &[closed_form], &[oracle], realizations_used)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    /// True when no tolerance is set or the relative error is within it.
    pub fn passed(&self) -> bool {
        self.tolerance.is_none_or(|t| self.rel_error <= t)
    }
}

/// Accuracy of the first-order spectrum against exact decompositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderQuality {
    pub samples: usize,
    pub eigenvalue_abs_error_mean: f64,
    pub eigenvalue_abs_error_max: f64,
    /// Mean of `|Δλ| / λ_exact` over indices with nonzero exact eigenvalue.
    pub eigenvalue_rel_error_mean: f64,
    /// Mean angle between approximate and exact eigenvectors, per index.
    pub angle_mean: Vec<f64>,
    pub angle_max: f64,
}

impl FirstOrderQuality {
    pub fn reports(&self) -> Vec<OracleReport> {
        let n = self.samples as u64;
        vec![
            OracleReport::scalar("eigenvalue_abs_error_mean", self.eigenvalue_abs_error_mean, 0.0, n),
            OracleReport::scalar("eigenvalue_abs_error_max", self.eigenvalue_abs_error_max, 0.0, n),
            OracleReport::scalar("eigenvalue_rel_error_mean", self.eigenvalue_rel_error_mean, 0.0, n),
            OracleReport::compare(
                "eigenvector_angle_mean",
                (self.angle_mean.len(), 1),
                &self.angle_mean,
                &vec![0.0; self.angle_mean.len()],
                n,
            ),
            OracleReport::scalar("eigenvector_angle_max", self.angle_max, 0.0, n),
        ]
    }
}

struct SampleQuality {
    abs: Vec<f64>,
    rel: Vec<f64>,
    angles: Vec<f64>,
}

pub fn first_order_quality(
    graph: &Graph,
    model: &PerturbationModel,
    n_samples: usize,
    seed: u64,
) -> Result<FirstOrderQuality> {
    let nominal = eigendecompose(&graph.laplacian());
    let corr = first_order_eigen(&nominal, model)?;
    let n = nominal.dim();
    let scale = nominal.eigenvalues.max().max(1.0);
    let per_sample: Vec<Result<SampleQuality>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let real = sample_realization(model, &mut ChaCha8Rng::seed_from_u64(stream_seed(seed, k)));
            let approx = approx_perturbed_eigs(&nominal, &corr, &real);
            let exact = exact_perturbed_eigs(graph, model, &real, &nominal)?;
            let mut q = SampleQuality { abs: Vec::with_capacity(n), rel: Vec::new(), angles: Vec::with_capacity(n) };
            for i in 0..n {
                let d = (approx.eigenvalues[i] - exact.eigenvalues[i]).abs();
                q.abs.push(d);
                if exact.eigenvalues[i].abs() > 1e-9 * scale {
                    q.rel.push(d / exact.eigenvalues[i].abs());
                }
                let a = approx.eigenvectors.column(i);
                let norm = a.norm();
                let cos = if norm > 0.0 { (a.dot(&exact.eigenvectors.column(i)) / norm).abs().min(1.0) } else { 0.0 };
                q.angles.push(cos.acos());
            }
            Ok(q)
        })
        .collect();

    let mut abs_sum = 0.0;
    let mut abs_count = 0usize;
    let mut abs_max = 0.0f64;
    let mut rel_sum = 0.0;
    let mut rel_count = 0usize;
    let mut angle_mean = vec![0.0; n];
    let mut angle_max = 0.0f64;
    for q in per_sample {
        let q = q?;
        for &a in &q.abs {
            abs_sum += a;
            abs_max = abs_max.max(a);
        }
        abs_count += q.abs.len();
        rel_sum += q.rel.iter().sum::<f64>();
        rel_count += q.rel.len();
        for (i, &t) in q.angles.iter().enumerate() {
            angle_mean[i] += t;
            angle_max = angle_max.max(t);
        }
    }
    let samples = n_samples.max(1) as f64;
    angle_mean.iter_mut().for_each(|t| *t /= samples);
    Ok(FirstOrderQuality {
        samples: n_samples,
        eigenvalue_abs_error_mean: abs_sum / abs_count.max(1) as f64,
        eigenvalue_abs_error_max: abs_max,
        eigenvalue_rel_error_mean: rel_sum / rel_count.max(1) as f64,
        angle_mean,
        angle_max,
    })
}
