//! Robust spectral masks.
//!
//! The designed filter is `Ũ D̃ Ũᵀ` on the perturbed graph. Its averaged
//! distance from the nominal filter `H = U D Uᵀ` is `f(D̃) = E‖R̃ − D̃‖²_F`
//! with `R̃ = Ũᵀ H Ũ`, and the optimal diagonal is `D̃*_ii = E[ũ_iᵀ H ũ_i]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EigenSystem;
use crate::moments::QuadraticForm;
use crate::perturbation::{
    approx_perturbed_eigs, enumerate_support, sample_realization, FirstOrderCorrections, PerturbationModel,
    DEFAULT_ENUMERATION_CAP,
};

/// Ideal frequency response `h(λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskSpec {
    Lowpass { cutoff: f64 },
    Highpass { cutoff: f64 },
    Bandpass { low: f64, high: f64 },
    Heat { tau: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::Heat { tau: 1.0 }
    }
}

impl MaskSpec {
    /// Response at a single frequency. `None` for explicit masks, which are
    /// only defined on a fixed spectrum.
    pub fn response(&self, lambda: f64) -> Option<f64> {
        let step = |b: bool| if b { 1.0 } else { 0.0 };
        match *self {
            MaskSpec::Lowpass { cutoff } => Some(step(lambda <= cutoff)),
            MaskSpec::Highpass { cutoff } => Some(step(lambda > cutoff)),
            MaskSpec::Bandpass { low, high } => Some(step(lambda >= low && lambda <= high)),
            MaskSpec::Heat { tau } => Some((-tau * lambda).exp()),
            MaskSpec::Explicit { .. } => None,
        }
    }

    /// Mask values on an arbitrary ascending spectrum.
    pub fn evaluate(&self, eigenvalues: &DVector<f64>) -> Result<DVector<f64>> {
        if let MaskSpec::Explicit { values } = self {
            if values.len() != eigenvalues.len() {
                return Err(Error::LengthMismatch(values.len(), eigenvalues.len()));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec("mask values must be finite".into()));
            }
            return Ok(DVector::from_vec(values.clone()));
        }
        Ok(eigenvalues.map(|l| self.response(l).expect("parametric mask")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMask(pub DVector<f64>);

impl SpectralMask {
    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Symmetric filter matrix `H = U D Uᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix(pub DMatrix<f64>);

impl FilterMatrix {
    pub fn from_mask(eig: &EigenSystem, mask: &SpectralMask) -> Self {
        FilterMatrix(eig.synthesize(mask.values()))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_ideal_mask(eig: &EigenSystem, spec: &MaskSpec) -> Result<SpectralMask> {
    let lmax = eig.eigenvalues[eig.dim() - 1];
    let in_range = |c: f64| (0.0..=lmax).contains(&c);
    match *spec {
        MaskSpec::Lowpass { cutoff } | MaskSpec::Highpass { cutoff } if !in_range(cutoff) => {
            return Err(Error::InvalidSpec(format!("cutoff {cutoff} outside [0, {lmax}]")));
        }
        MaskSpec::Bandpass { low, high } if !in_range(low) || !in_range(high) || low > high => {
            return Err(Error::InvalidSpec(format!("band [{low}, {high}] outside [0, {lmax}]")));
        }
        _ => {}
    }
    spec.evaluate(&eig.eigenvalues).map(SpectralMask)
}

/// Which reading of the expected quadratic term to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSum {
    /// Cross term summed over `m ≠ n` only; exact under `E[Z_m²] = p_m`.
    #[default]
    Distinct,
    /// Cross term summed over all `(m, n)`, adding a spurious `p_m²` diagonal.
    Unrestricted,
}

pub fn optimal_robust_mask(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    filter: &FilterMatrix,
) -> Result<SpectralMask> {
    optimal_robust_mask_with(eig, corr, model, filter, PairSum::Distinct)
}

pub fn optimal_robust_mask_with(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    filter: &FilterMatrix,
    pairs: PairSum,
) -> Result<SpectralMask> {
    let n = eig.dim();
    check_dims(eig, corr, model)?;
    let h = filter.matrix();
    let probs = model.probs();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let u = eig.vector(i);
        let hu = h * u;
        let mut single = 0.0;
        let mut single_sq = 0.0;
        let mut s = DVector::zeros(n);
        for (m, du) in corr.delta_u.iter().enumerate() {
            let p = probs[m];
            if p == 0.0 {
                continue;
            }
            let d = du.column(i);
            let dhd = d.dot(&(h * d));
            single += p * dhd;
            single_sq += p * p * dhd;
            s.axpy(p * corr.sigma[m], &d, 1.0);
        }
        // Σ_{m,n} p_m p_n σ_m σ_n δu_mᵀ H δu_n = sᵀ H s
        let all_pairs = s.dot(&(h * &s));
        let cross = match pairs {
            PairSum::Distinct => all_pairs - single_sq,
            PairSum::Unrestricted => all_pairs,
        };
        out[i] = u.dot(&hu) + single + cross + 2.0 * hu.dot(&s);
    }
    Ok(SpectralMask(out))
}

fn check_dims(eig: &EigenSystem, corr: &FirstOrderCorrections, model: &PerturbationModel) -> Result<()> {
    if corr.num_edges() != model.len() {
        return Err(Error::LengthMismatch(corr.num_edges(), model.len()));
    }
    if model.num_nodes() != eig.dim() {
        return Err(Error::LengthMismatch(model.num_nodes(), eig.dim()));
    }
    Ok(())
}

/// How an expectation over perturbation outcomes is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    /// Exact second-moment expansion in the edge indicators.
    ClosedForm,
    /// Exact sum over every outcome of the uncertain edges.
    Enumeration,
    MonteCarlo {
        samples: usize,
        seed: u64,
    },
}

/// Averaged squared distance `f(D̃)` under the first-order basis.
pub fn averaged_mask_error(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    filter: &FilterMatrix,
    mask: &SpectralMask,
    estimator: Estimator,
) -> Result<f64> {
    check_dims(eig, corr, model)?;
    if mask.len() != eig.dim() {
        return Err(Error::LengthMismatch(mask.len(), eig.dim()));
    }
    let h = filter.matrix();
    let d = mask.values();
    let realization_error = |real: &crate::perturbation::PerturbationRealization| {
        let approx = approx_perturbed_eigs(eig, corr, real);
        let ut = &approx.eigenvectors;
        let mut r = ut.transpose() * h * ut;
        for i in 0..d.len() {
            r[(i, i)] -= d[i];
        }
        r.norm_squared()
    };
    match estimator {
        Estimator::ClosedForm => Ok(closed_form_mask_error(eig, corr, model, h, d)),
        Estimator::Enumeration => {
            let mut acc = 0.0;
            for (real, w) in enumerate_support(model, DEFAULT_ENUMERATION_CAP)? {
                if w > 0.0 {
                    acc += w * realization_error(&real);
                }
            }
            Ok(acc)
        }
        Estimator::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let total: f64 = (0..samples.max(1)).map(|_| realization_error(&sample_realization(model, &mut rng))).sum();
            Ok(total / samples.max(1) as f64)
        }
    }
}

/// `Σ_{ij} E[(R̃_ij − D̃_ij)²]`, each entry of `R̃ = Ũᵀ H Ũ` being a
/// quadratic polynomial in the indicators.
fn closed_form_mask_error(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    h: &DMatrix<f64>,
    d: &DVector<f64>,
) -> f64 {
    let n = eig.dim();
    let probs = DVector::from_vec(model.probs());
    let u = &eig.eigenvectors;
    let hu = h * u;
    let dirs: Vec<DMatrix<f64>> = (0..n).map(|i| corr.signed_directions(i)).collect();
    let hdirs: Vec<DMatrix<f64>> = dirs.iter().map(|dm| h * dm).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i..n {
            let constant = u.column(i).dot(&hu.column(j));
            // a_m = σ_m (δu_imᵀ H u_j + u_iᵀ H δu_jm)
            let linear = dirs[i].transpose() * hu.column(j) + hdirs[j].transpose() * u.column(i);
            let quad = dirs[i].transpose() * &hdirs[j];
            let form = QuadraticForm::new(constant, linear, &quad);
            let target = if i == j { d[i] } else { 0.0 };
            let mean = form.mean(&probs);
            let second = form.second_moment(&probs);
            let err = second - 2.0 * target * mean + target * target;
            total += if i == j { err } else { 2.0 * err };
        }
    }
    total.max(0.0)
}
