//! Joint robust design against graph perturbations and additive input
//! noise `y = x + n`, `n ~ N(0, σ² I)`.
//!
//! The objective adds `γ E‖D_y Φ̃ h̃ − w‖²` to the FIR objective, where
//! `D_y = diag(Ũᵀ y)` and `w = Ũᵀ H x`. Conditional on the graph outcome the
//! noise expectation is analytic: `E[D_y²] = diag(ŷ_x)² + σ² diag(‖ũ_i‖²)`
//! and `E[D_y w] = diag(ŷ_x) w` with `ŷ_x = Ũᵀ x`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fir::{
    condition_numbers, design_robust_fir, fir_matrix, realization_fir_error, solve_symmetric, vandermonde,
    FirCoefficients, FirDesign, FirDesignOptions, VandermondeSystem,
};
use crate::graph::{EigenSystem, Graph};
use crate::oracle::stream_seed;
use crate::perturbation::{
    approx_perturbed_eigs, delta_laplacian, enumerate_support, sample_realization, FirstOrderCorrections,
    PerturbationModel, PerturbationRealization, DEFAULT_ENUMERATION_CAP,
};
use crate::spectral::FilterMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Unit-norm equal-weight combination of the first `k` nominal
    /// eigenvectors; `k` defaults to `⌈N/10⌉`.
    Lowfreq {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::Lowfreq { k: None }
    }
}

impl SignalSpec {
    pub fn build(&self, eig: &EigenSystem) -> Result<DVector<f64>> {
        let n = eig.dim();
        match self {
            SignalSpec::Lowfreq { k } => {
                let k = k.unwrap_or(n.div_ceil(10));
                if k == 0 || k > n {
                    return Err(Error::InvalidSpec(format!("lowfreq k must be in 1..={n}, got {k}")));
                }
                let mut x = DVector::zeros(n);
                for i in 0..k {
                    x += eig.vector(i);
                }
                Ok(x.normalize())
            }
            SignalSpec::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::LengthMismatch(values.len(), n));
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoisyDesignProblem {
    pub x: DVector<f64>,
    pub noise_variance: f64,
    pub gamma: f64,
    pub h_nominal: FirCoefficients,
    /// Order of the designed filter.
    pub order: usize,
    pub model: PerturbationModel,
}

impl NoisyDesignProblem {
    pub fn new(
        x: DVector<f64>,
        noise_variance: f64,
        gamma: f64,
        h_nominal: FirCoefficients,
        order: usize,
        model: PerturbationModel,
    ) -> Result<Self> {
        if x.len() != model.num_nodes() {
            return Err(Error::LengthMismatch(x.len(), model.num_nodes()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("signal must be finite".into()));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidSpec(format!("gamma must be a non-negative number, got {gamma}")));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::InvalidSpec(format!("noise variance must be non-negative, got {noise_variance}")));
        }
        Ok(Self { x, noise_variance, gamma, h_nominal, order, model })
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.noise_variance, gamma, self.h_nominal.clone(), self.order, self.model.clone())
    }

    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self> {
        Self::new(self.x.clone(), noise_variance, self.gamma, self.h_nominal.clone(), self.order, self.model.clone())
    }
}

/// How expectations over graph outcomes and noise are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisyEstimator {
    /// Exact sum over outcomes, analytic noise moments.
    #[default]
    Enumeration,
    /// `n_graph` sampled outcomes, each with `n_noise` noise draws. With
    /// `n_noise = 0` the noise moments are taken analytically.
    MonteCarlo { n_graph: usize, n_noise: usize, seed: u64 },
}

/// `E_n[diag(Ũᵀ y)²]` as a vector.
pub fn expected_dy_squared(ut: &DMatrix<f64>, x: &DVector<f64>, noise_variance: f64) -> DVector<f64> {
    let yx = ut.transpose() * x;
    DVector::from_iterator(
        ut.ncols(),
        (0..ut.ncols()).map(|i| yx[i] * yx[i] + noise_variance * ut.column(i).norm_squared()),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)))
}

fn weighted_gram(phi: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = phi.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[i];
    }
    phi.transpose() * scaled
}

/// Noise terms `(E[Φ̃ᵀ D_y² Φ̃], E[Φ̃ᵀ D_y w])` for one graph outcome.
fn noise_terms(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    real: &PerturbationRealization,
    problem: &NoisyDesignProblem,
    hx: &DVector<f64>,
    draws: Option<(&mut ChaCha8Rng, usize)>,
) -> (DMatrix<f64>, DVector<f64>) {
    let approx = approx_perturbed_eigs(eig, corr, real);
    log::debug!("orthonormality defect {:.3e}", approx.orthonormality_defect);
    let ut = &approx.eigenvectors;
    let phi = vandermonde(&approx.eigenvalues, problem.order);
    let w = ut.transpose() * hx;
    let yx = ut.transpose() * &problem.x;
    let b = phi.transpose() * yx.component_mul(&w);
    match draws {
        Some((rng, count)) if count > 0 => {
            let std = problem.noise_variance.sqrt();
            let mut d = DVector::zeros(yx.len());
            let mut yw = DVector::zeros(yx.len());
            for _ in 0..count {
                let y = &yx + ut.transpose() * gaussian(rng, problem.x.len(), std);
                d += y.component_mul(&y);
                yw += y.component_mul(&w);
            }
            let inv = 1.0 / count as f64;
            (weighted_gram(&phi, &(d * inv)), phi.transpose() * (yw * inv))
        }
        _ => (weighted_gram(&phi, &expected_dy_squared(ut, &problem.x, problem.noise_variance)), b),
    }
}

fn expected_noise_terms(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    problem: &NoisyDesignProblem,
    estimator: NoisyEstimator,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let h = problem.h_nominal.filter_matrix(eig);
    let hx = h.matrix() * &problem.x;
    let dim = problem.order + 1;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    match estimator {
        NoisyEstimator::Enumeration => {
            for (real, w) in enumerate_support(&problem.model, DEFAULT_ENUMERATION_CAP)? {
                if w > 0.0 {
                    let (ar, br) = noise_terms(eig, corr, &real, problem, &hx, None);
                    a += ar * w;
                    b += br * w;
                }
            }
        }
        NoisyEstimator::MonteCarlo { n_graph, n_noise, seed } => {
            let n_graph = n_graph.max(1);
            let parts: Vec<_> = (0..n_graph as u64)
                .into_par_iter()
                .map(|g| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, g));
                    let real = sample_realization(&problem.model, &mut rng);
                    noise_terms(eig, corr, &real, problem, &hx, Some((&mut rng, n_noise)))
                })
                .collect();
            for (ar, br) in parts {
                a += ar;
                b += br;
            }
            a /= n_graph as f64;
            b /= n_graph as f64;
        }
    }
    Ok((a, b))
}

/// Minimizer of `g(h̃) + γ E‖D_y Φ̃ h̃ − w‖²`. The perturbation part of the
/// system is the one built by [`design_robust_fir`]; at `γ = 0` that design
/// is returned unchanged.
pub fn design_noisy_robust_fir(
    problem: &NoisyDesignProblem,
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    estimator: NoisyEstimator,
    options: FirDesignOptions,
) -> Result<FirDesign> {
    let base = design_robust_fir(eig, corr, &problem.model, &problem.h_nominal, problem.order, options)?;
    if problem.gamma == 0.0 {
        return Ok(base);
    }
    let (na, nb) = expected_noise_terms(eig, corr, problem, estimator)?;
    let gram = &base.system.gram + na * problem.gamma;
    let rhs = &base.system.rhs + nb * problem.gamma;
    let (taps, escalated_ridge) = solve_symmetric(&gram, &rhs, options.ridge)?;
    let (condition_estimate, scaled_condition) = condition_numbers(&gram);
    Ok(FirDesign {
        taps: FirCoefficients(taps),
        system: VandermondeSystem { gram, rhs, condition_estimate, scaled_condition },
        escalated_ridge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub gamma: f64,
    /// `g(h̃) / ‖H‖²_F`.
    pub d_filter: f64,
    /// `E‖H̃ y − H x‖² / ‖H x‖²` with `H̃ = Σ h̃_k L̃^k` on the exactly
    /// perturbed Laplacian.
    pub d_xy: f64,
    /// The design's own surrogate `E‖D_y Φ̃ h̃ − w‖² / ‖H x‖²`.
    pub d_xy_first_order: f64,
    pub d_filter_stderr: f64,
    pub d_xy_stderr: f64,
}

struct OutcomeErrors {
    filter: f64,
    xy: f64,
    xy_first_order: f64,
}

#[allow(clippy::too_many_arguments)]
fn outcome_errors(
    graph: &Graph,
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    problem: &NoisyDesignProblem,
    h: &FilterMatrix,
    hx: &DVector<f64>,
    h_tilde: &FirCoefficients,
    real: &PerturbationRealization,
    draws: Option<(&mut ChaCha8Rng, usize)>,
) -> OutcomeErrors {
    let filter = realization_fir_error(eig, corr, real, h_tilde, h);
    let lap = graph.laplacian().matrix() + delta_laplacian(&problem.model, real);
    let ht = fir_matrix(&lap, h_tilde);
    let approx = approx_perturbed_eigs(eig, corr, real);
    let ut = &approx.eigenvectors;
    let resp = h_tilde.responses(&approx.eigenvalues);
    let w = ut.transpose() * hx;
    let yx = ut.transpose() * &problem.x;
    let sigma2 = problem.noise_variance;
    let xy_first_order = (yx.component_mul(&resp) - &w).norm_squared()
        + sigma2 * (0..resp.len()).map(|i| ut.column(i).norm_squared() * resp[i] * resp[i]).sum::<f64>();
    let xy = match draws {
        Some((rng, count)) if count > 0 => {
            let std = sigma2.sqrt();
            let mut acc = 0.0;
            for _ in 0..count {
                let y = &problem.x + gaussian(rng, problem.x.len(), std);
                acc += (&ht * y - hx).norm_squared();
            }
            acc / count as f64
        }
        _ => (&ht * &problem.x - hx).norm_squared() + sigma2 * ht.norm_squared(),
    };
    OutcomeErrors { filter, xy, xy_first_order }
}

/// Normalized filter and output errors of `h̃` for the given problem.
pub fn evaluate_tradeoff(
    problem: &NoisyDesignProblem,
    graph: &Graph,
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    h_tilde: &FirCoefficients,
    estimator: NoisyEstimator,
) -> Result<TradeoffPoint> {
    let h = problem.h_nominal.filter_matrix(eig);
    let hx = h.matrix() * &problem.x;
    let h_norm = h.matrix().norm_squared();
    let hx_norm = hx.norm_squared();
    if h_norm == 0.0 || hx_norm == 0.0 {
        return Err(Error::InvalidNominal);
    }
    let outcomes: Vec<(OutcomeErrors, f64)> = match estimator {
        NoisyEstimator::Enumeration => enumerate_support(&problem.model, DEFAULT_ENUMERATION_CAP)?
            .filter(|(_, w)| *w > 0.0)
            .map(|(real, w)| (outcome_errors(graph, eig, corr, problem, &h, &hx, h_tilde, &real, None), w))
            .collect(),
        NoisyEstimator::MonteCarlo { n_graph, n_noise, seed } => {
            let n_graph = n_graph.max(1);
            (0..n_graph as u64)
                .into_par_iter()
                .map(|g| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, g));
                    let real = sample_realization(&problem.model, &mut rng);
                    let e =
                        outcome_errors(graph, eig, corr, problem, &h, &hx, h_tilde, &real, Some((&mut rng, n_noise)));
                    (e, 1.0 / n_graph as f64)
                })
                .collect()
        }
    };
    let mean = |f: &dyn Fn(&OutcomeErrors) -> f64| outcomes.iter().map(|(e, w)| w * f(e)).sum::<f64>();
    let stderr = |f: &dyn Fn(&OutcomeErrors) -> f64, m: f64| match estimator {
        NoisyEstimator::Enumeration => 0.0,
        NoisyEstimator::MonteCarlo { .. } => {
            let n = outcomes.len() as f64;
            if n < 2.0 {
                return 0.0;
            }
            let var = outcomes.iter().map(|(e, _)| (f(e) - m).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        }
    };
    let filter = mean(&|e| e.filter);
    let xy = mean(&|e| e.xy);
    Ok(TradeoffPoint {
        gamma: problem.gamma,
        d_filter: filter / h_norm,
        d_xy: xy / hx_norm,
        d_xy_first_order: mean(&|e| e.xy_first_order) / hx_norm,
        d_filter_stderr: stderr(&|e| e.filter, filter) / h_norm,
        d_xy_stderr: stderr(&|e| e.xy, xy) / hx_norm,
    })
}
