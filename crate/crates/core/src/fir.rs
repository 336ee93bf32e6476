//! Robust polynomial (FIR) graph filters `Σ_k h_k L^k`.
//!
//! The design minimizes `g(h̃) = E‖diag(Φ̃ h̃) − M‖²_F` where `Φ̃` is the
//! Vandermonde matrix of the first-order perturbed spectrum and
//! `M = Ũᵀ H Ũ`. Only the diagonal `m = diag(M)` depends on `h̃`, giving the
//! normal equations `E[Φ̃ᵀΦ̃] h̃ = E[Φ̃ᵀ m]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EigenSystem, Laplacian};
use crate::moments::{expected_power_sums, MomentConvention};
use crate::perturbation::{
    approx_perturbed_eigs, enumerate_support, sample_realization, FirstOrderCorrections, PerturbationModel,
    PerturbationRealization, DEFAULT_ENUMERATION_CAP,
};
use crate::spectral::{optimal_robust_mask, Estimator, FilterMatrix, MaskSpec};

/// Orders above this need [`FirDesignOptions::allow_high_order`].
pub const MAX_UNGUARDED_ORDER: usize = 12;

/// Relative ridge, in Jacobi-scaled coordinates, added when the Gram system
/// is numerically singular.
const RIDGE_ESCALATION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FirCoefficients(pub DVector<f64>);

impl FirCoefficients {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidSpec("a filter needs at least one tap".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSpec("taps must be finite".into()));
        }
        Ok(Self(DVector::from_vec(taps)))
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn taps(&self) -> &DVector<f64> {
        &self.0
    }

    /// `Σ_k h_k λ^k` by Horner's rule.
    pub fn response(&self, lambda: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
    }

    pub fn responses(&self, eigenvalues: &DVector<f64>) -> DVector<f64> {
        eigenvalues.map(|l| self.response(l))
    }

    /// `U diag(h(λ)) Uᵀ` on the nominal basis.
    pub fn filter_matrix(&self, eig: &EigenSystem) -> FilterMatrix {
        FilterMatrix(eig.synthesize(&self.responses(&eig.eigenvalues)))
    }
}

/// `Σ_k h_k L^k s`, evaluated by Horner's rule on matrix-vector products.
pub fn apply_fir(lap: &Laplacian, h: &FirCoefficients, signal: &DVector<f64>) -> Result<DVector<f64>> {
    if signal.len() != lap.dim() {
        return Err(Error::LengthMismatch(signal.len(), lap.dim()));
    }
    let taps = h.taps();
    let mut y = signal * taps[taps.len() - 1];
    for k in (0..taps.len() - 1).rev() {
        y = lap.matrix() * y + signal * taps[k];
    }
    Ok(y)
}

/// `Σ_k h_k L^k` as a dense matrix.
pub fn fir_matrix(lap: &DMatrix<f64>, h: &FirCoefficients) -> DMatrix<f64> {
    let n = lap.nrows();
    let taps = h.taps();
    let mut acc = DMatrix::identity(n, n) * taps[taps.len() - 1];
    for k in (0..taps.len() - 1).rev() {
        acc = lap * acc;
        for i in 0..n {
            acc[(i, i)] += taps[k];
        }
    }
    acc
}

/// Vandermonde matrix `[1, λ, …, λ^order]`.
pub fn vandermonde(eigenvalues: &DVector<f64>, order: usize) -> DMatrix<f64> {
    let n = eigenvalues.len();
    let mut v = DMatrix::zeros(n, order + 1);
    for i in 0..n {
        let mut p = 1.0;
        for k in 0..=order {
            v[(i, k)] = p;
            p *= eigenvalues[i];
        }
    }
    v
}

/// Least-squares taps matching `target` on the given spectrum. Columns are
/// normalized before the SVD solve and the scaling undone afterwards.
pub fn fit_taps(eigenvalues: &DVector<f64>, target: &DVector<f64>, order: usize) -> Result<FirCoefficients> {
    if target.len() != eigenvalues.len() {
        return Err(Error::LengthMismatch(target.len(), eigenvalues.len()));
    }
    let mut v = vandermonde(eigenvalues, order);
    let scales: Vec<f64> = v
        .column_iter()
        .map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    for (k, mut c) in v.column_iter_mut().enumerate() {
        c *= scales[k];
    }
    let svd = v.svd(true, true);
    let y = svd.solve(target, f64::EPSILON * (order + 1) as f64).map_err(|_| Error::SingularSystem)?;
    Ok(FirCoefficients(DVector::from_iterator(order + 1, (0..=order).map(|k| y[k] * scales[k]))))
}

/// Nominal taps for experiments: explicit, or fit to a mask on the nominal
/// spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirSpec {
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_to_mask: Option<MaskSpec>,
}

impl Default for FirSpec {
    fn default() -> Self {
        Self { order: 5, taps: None, fit_to_mask: Some(MaskSpec::default()) }
    }
}

impl FirSpec {
    pub fn resolve(&self, eigenvalues: &DVector<f64>) -> Result<FirCoefficients> {
        match (&self.taps, &self.fit_to_mask) {
            (Some(taps), None) => {
                if taps.len() != self.order + 1 {
                    return Err(Error::InvalidSpec(format!(
                        "order {} needs {} taps, got {}",
                        self.order,
                        self.order + 1,
                        taps.len()
                    )));
                }
                FirCoefficients::new(taps.clone())
            }
            (None, Some(mask)) => fit_taps(eigenvalues, &mask.evaluate(eigenvalues)?, self.order),
            _ => Err(Error::InvalidSpec("give exactly one of `taps` or `fit_to_mask`".into())),
        }
    }

    /// Whether taps come from a mask and can be refit on another spectrum.
    pub fn is_fitted(&self) -> bool {
        self.fit_to_mask.is_some()
    }
}

/// Expected normal equations of the robust design.
#[derive(Debug, Clone)]
pub struct VandermondeSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Eigenvalue ratio of the Gram matrix as given.
    pub condition_estimate: f64,
    /// Same ratio after symmetric Jacobi scaling, which is what the solver sees.
    pub scaled_condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsMode {
    /// `Σ_i E[λ̃_i^k] E[m_i]`, treating eigenvalue and eigenvector
    /// perturbations as independent.
    PaperFactorized,
    /// Exact sum over outcomes of `Σ_i λ̃_i^k ũ_iᵀ H ũ_i`.
    Enumeration,
    /// Enumeration when the uncertain edges fit under the cap, otherwise
    /// factorized.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirDesignOptions {
    pub ridge: f64,
    pub rhs_mode: RhsMode,
    pub convention: MomentConvention,
    pub allow_high_order: bool,
}

impl Default for FirDesignOptions {
    fn default() -> Self {
        Self { ridge: 0.0, rhs_mode: RhsMode::Auto, convention: MomentConvention::Bernoulli, allow_high_order: false }
    }
}

#[derive(Debug, Clone)]
pub struct FirDesign {
    pub taps: FirCoefficients,
    pub system: VandermondeSystem,
    /// Jacobi-scaled ridge added by escalation, zero when none was needed.
    pub escalated_ridge: f64,
}

fn check_order(eig: &EigenSystem, order: usize, allow_high_order: bool) -> Result<()> {
    if order > MAX_UNGUARDED_ORDER && !allow_high_order {
        return Err(Error::InvalidSpec(format!(
            "order {order} exceeds {MAX_UNGUARDED_ORDER}; Vandermonde Grams are numerically singular there"
        )));
    }
    if order + 1 > eig.dim() {
        return Err(Error::InvalidSpec(format!("order {order} is not identifiable on {} nodes", eig.dim())));
    }
    Ok(())
}

/// `E[Φ̃ᵀΦ̃]_{ab} = Σ_i E[λ̃_i^{a+b}]`.
pub fn expected_gram(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    order: usize,
    convention: MomentConvention,
) -> Result<DMatrix<f64>> {
    if corr.num_edges() != model.len() {
        return Err(Error::LengthMismatch(corr.num_edges(), model.len()));
    }
    let sums = expected_power_sums(eig, corr, model, 2 * order, convention);
    Ok(DMatrix::from_fn(order + 1, order + 1, |a, b| sums.totals[a + b]))
}

pub fn expected_rhs(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    h_nominal: &FirCoefficients,
    order: usize,
    mode: RhsMode,
    convention: MomentConvention,
) -> Result<DVector<f64>> {
    let h = h_nominal.filter_matrix(eig);
    let mode = match mode {
        RhsMode::Auto if model.uncertain_indices().len() <= DEFAULT_ENUMERATION_CAP => RhsMode::Enumeration,
        RhsMode::Auto => RhsMode::PaperFactorized,
        m => m,
    };
    match mode {
        RhsMode::PaperFactorized => {
            let powers = expected_power_sums(eig, corr, model, order, convention);
            let mean_m = optimal_robust_mask(eig, corr, model, &h)?;
            Ok(powers.per_index.transpose() * mean_m.values())
        }
        _ => {
            let mut acc = DVector::zeros(order + 1);
            for (real, w) in enumerate_support(model, DEFAULT_ENUMERATION_CAP)? {
                if w > 0.0 {
                    acc.axpy(w, &realization_rhs(eig, corr, &real, &h, order), 1.0);
                }
            }
            Ok(acc)
        }
    }
}

fn realization_rhs(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    real: &PerturbationRealization,
    h: &FilterMatrix,
    order: usize,
) -> DVector<f64> {
    let approx = approx_perturbed_eigs(eig, corr, real);
    let m = diag_quadratic(&approx.eigenvectors, h.matrix());
    vandermonde(&approx.eigenvalues, order).transpose() * m
}

/// `diag(Uᵀ H U)`.
pub(crate) fn diag_quadratic(u: &DMatrix<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let hu = h * u;
    DVector::from_iterator(u.ncols(), (0..u.ncols()).map(|i| u.column(i).dot(&hu.column(i))))
}

fn ratio(eigs: &DVector<f64>) -> f64 {
    let max = eigs.max();
    let min = eigs.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn jacobi_scales(gram: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        gram.nrows(),
        (0..gram.nrows()).map(|k| {
            let d = gram[(k, k)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }),
    )
}

pub(crate) fn condition_numbers(gram: &DMatrix<f64>) -> (f64, f64) {
    let raw = ratio(&SymmetricEigen::new(gram.clone()).eigenvalues);
    let s = jacobi_scales(gram);
    let scaled = DMatrix::from_fn(gram.nrows(), gram.ncols(), |a, b| s[a] * gram[(a, b)] * s[b]);
    (raw, ratio(&SymmetricEigen::new(scaled).eigenvalues))
}

/// Solves `(A + ridge I) x = b` for symmetric `A` by Cholesky on the
/// Jacobi-scaled system. When that system is numerically singular a ridge
/// of `1e-10` (scaled units) is added once before giving up. Returns the
/// solution and the escalated ridge.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, f64)> {
    let n = a.nrows();
    let mut shifted = a.clone();
    for k in 0..n {
        shifted[(k, k)] += ridge;
    }
    let s = jacobi_scales(&shifted);
    let scaled = DMatrix::from_fn(n, n, |i, j| s[i] * shifted[(i, j)] * s[j]);
    let sb = b.component_mul(&s);

    let attempt = |m: &DMatrix<f64>| -> Option<DVector<f64>> {
        let eigs = SymmetricEigen::new(m.clone()).eigenvalues;
        if ratio(&eigs) > 1.0 / (f64::EPSILON * n as f64) {
            return None;
        }
        m.clone().cholesky().map(|c| c.solve(&sb))
    };
    if let Some(y) = attempt(&scaled) {
        return Ok((y.component_mul(&s), 0.0));
    }
    let mut regularized = scaled;
    for k in 0..n {
        regularized[(k, k)] += RIDGE_ESCALATION;
    }
    match regularized.cholesky() {
        Some(c) => {
            log::warn!("Gram system numerically singular; solved with scaled ridge {RIDGE_ESCALATION:e}");
            Ok((c.solve(&sb).component_mul(&s), RIDGE_ESCALATION))
        }
        None => Err(Error::SingularSystem),
    }
}

pub fn design_robust_fir(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    h_nominal: &FirCoefficients,
    order: usize,
    options: FirDesignOptions,
) -> Result<FirDesign> {
    check_order(eig, order, options.allow_high_order)?;
    let gram = expected_gram(eig, corr, model, order, options.convention)?;
    let rhs = expected_rhs(eig, corr, model, h_nominal, order, options.rhs_mode, options.convention)?;
    let (taps, escalated_ridge) = solve_symmetric(&gram, &rhs, options.ridge)?;
    let (condition_estimate, scaled_condition) = condition_numbers(&gram);
    Ok(FirDesign {
        taps: FirCoefficients(taps),
        system: VandermondeSystem { gram, rhs, condition_estimate, scaled_condition },
        escalated_ridge,
    })
}

/// `‖diag(Φ̃ h̃) − Ũᵀ H Ũ‖²_F` for one outcome.
pub fn realization_fir_error(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    real: &PerturbationRealization,
    h_tilde: &FirCoefficients,
    h: &FilterMatrix,
) -> f64 {
    let approx = approx_perturbed_eigs(eig, corr, real);
    let ut = &approx.eigenvectors;
    let mut m = ut.transpose() * h.matrix() * ut;
    for i in 0..m.nrows() {
        m[(i, i)] -= h_tilde.response(approx.eigenvalues[i]);
    }
    m.norm_squared()
}

/// Averaged FIR error `g(h̃)` under the first-order model.
pub fn averaged_fir_error(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    model: &PerturbationModel,
    h_tilde: &FirCoefficients,
    h_nominal: &FirCoefficients,
    estimator: Estimator,
) -> Result<f64> {
    let h = h_nominal.filter_matrix(eig);
    match estimator {
        Estimator::ClosedForm => {
            Err(Error::InvalidSpec("the FIR error has no closed-form estimator; use enumeration or monte_carlo".into()))
        }
        Estimator::Enumeration => {
            let mut acc = 0.0;
            for (real, w) in enumerate_support(model, DEFAULT_ENUMERATION_CAP)? {
                if w > 0.0 {
                    acc += w * realization_fir_error(eig, corr, &real, h_tilde, &h);
                }
            }
            Ok(acc)
        }
        Estimator::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = samples.max(1);
            let total: f64 = (0..n)
                .map(|_| realization_fir_error(eig, corr, &sample_realization(model, &mut rng), h_tilde, &h))
                .sum();
            Ok(total / n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::perturbation::{first_order_eigen, EdgeChange, PerturbedEdge};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn instance(p: f64, m: usize) -> (Graph, EigenSystem, PerturbationModel, FirstOrderCorrections) {
        let (g, eig) = crate::testutil::distinct_sbm(5, 0.7, 0.2, 3);
        let mut edges: Vec<_> = g
            .edges()
            .iter()
            .step_by(3)
            .take(m.div_ceil(2))
            .map(|&(a, b)| PerturbedEdge::new(a, b, EdgeChange::Remove, p))
            .collect();
        let adds: Vec<_> =
            (0..10).flat_map(|a| (a + 1..10).map(move |b| (a, b))).filter(|&(a, b)| !g.has_edge(a, b)).collect();
        for &(a, b) in adds.iter().take(m / 2) {
            edges.push(PerturbedEdge::new(a, b, EdgeChange::Add, p));
        }
        let model = PerturbationModel::new(&g, edges).unwrap();
        let corr = first_order_eigen(&eig, &model).unwrap();
        (g, eig, model, corr)
    }

    #[test]
    fn identity_and_single_tap() {
        let lap = Graph::path(3).laplacian();
        let s = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let id = FirCoefficients::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(apply_fir(&lap, &id, &s).unwrap(), s);
        let shift = FirCoefficients::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(apply_fir(&lap, &shift, &s).unwrap().as_slice(), &[1.0, -1.0, 0.0]);
        assert!(apply_fir(&lap, &shift, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn horner_matches_spectral_evaluation() {
        let (g, eig, _, _) = instance(0.5, 2);
        let lap = g.laplacian();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let h = FirCoefficients::new((0..4).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            let s = DVector::from_fn(10, |_, _| rng.random::<f64>());
            let horner = apply_fir(&lap, &h, &s).unwrap();
            let spectral = h.filter_matrix(&eig).matrix() * &s;
            assert!((&horner - &spectral).norm() < 1e-8 * spectral.norm().max(1.0));
            assert!((fir_matrix(lap.matrix(), &h) - h.filter_matrix(&eig).matrix()).amax() < 1e-8);
        }
    }

    #[test]
    fn gram_without_perturbation_is_nominal_vandermonde() {
        let (_, eig, model, corr) = instance(0.0, 4);
        let gram = expected_gram(&eig, &corr, &model, 3, MomentConvention::Bernoulli).unwrap();
        let v = vandermonde(&eig.eigenvalues, 3);
        let nominal = v.transpose() * &v;
        assert!((&gram - &nominal).amax() < 1e-10 * nominal.amax());
        assert_eq!(gram[(0, 0)], 10.0);
    }

    #[test]
    fn gram_matches_enumeration() {
        let (_, eig, model, corr) = instance(0.35, 5);
        let gram = expected_gram(&eig, &corr, &model, 3, MomentConvention::Bernoulli).unwrap();
        let mut oracle = DMatrix::zeros(4, 4);
        for (real, w) in enumerate_support(&model, 20).unwrap() {
            let ap = approx_perturbed_eigs(&eig, &corr, &real);
            let v = vandermonde(&ap.eigenvalues, 3);
            oracle += v.transpose() * v * w;
        }
        assert!((&gram - &oracle).amax() <= 1e-10 * oracle.amax());
        assert_eq!(gram[(0, 0)], 10.0);
        assert!(SymmetricEigen::new(gram.clone()).eigenvalues.min() >= -1e-8 * gram.trace());
    }

    #[test]
    fn rhs_modes_coincide_when_deterministic() {
        let (_, eig, model, corr) = instance(1.0, 1);
        let hn = FirCoefficients::new(vec![1.0, -0.3, 0.02]).unwrap();
        let a = expected_rhs(&eig, &corr, &model, &hn, 2, RhsMode::Enumeration, MomentConvention::Bernoulli).unwrap();
        let b =
            expected_rhs(&eig, &corr, &model, &hn, 2, RhsMode::PaperFactorized, MomentConvention::Bernoulli).unwrap();
        assert!((&a - &b).amax() < 1e-10 * a.amax());
    }

    #[test]
    fn unperturbed_design_recovers_nominal_taps() {
        let (_, eig, model, corr) = instance(0.0, 4);
        let hn = FirCoefficients::new(vec![1.0, -0.3, 0.02, -0.001]).unwrap();
        for mode in [RhsMode::Enumeration, RhsMode::PaperFactorized] {
            let opts = FirDesignOptions { rhs_mode: mode, ..Default::default() };
            let d = design_robust_fir(&eig, &corr, &model, &hn, 3, opts).unwrap();
            assert!((d.taps.taps() - hn.taps()).amax() < 1e-8, "{:?}", d.taps);
            assert_eq!(d.escalated_ridge, 0.0);
        }
        let e = averaged_fir_error(&eig, &corr, &model, &hn, &hn, Estimator::Enumeration).unwrap();
        assert!(e < 1e-20);
    }

    #[test]
    fn zero_order_design_is_mean() {
        let (_, eig, model, corr) = instance(0.4, 4);
        let hn = FirCoefficients::new(vec![0.8, -0.1]).unwrap();
        let d = design_robust_fir(&eig, &corr, &model, &hn, 0, FirDesignOptions::default()).unwrap();
        let h = hn.filter_matrix(&eig);
        let mut mean_sum = 0.0;
        for (real, w) in enumerate_support(&model, 20).unwrap() {
            let ap = approx_perturbed_eigs(&eig, &corr, &real);
            mean_sum += w * diag_quadratic(&ap.eigenvectors, h.matrix()).sum();
        }
        assert_abs_diff_eq!(d.taps.taps()[0], mean_sum / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn robust_design_beats_nominal_reuse() {
        let (_, eig, model, corr) = instance(0.5, 6);
        let hn = FirCoefficients::new(vec![1.0, -0.25, 0.01]).unwrap();
        let d = design_robust_fir(&eig, &corr, &model, &hn, 2, FirDesignOptions::default()).unwrap();
        let robust = averaged_fir_error(&eig, &corr, &model, &d.taps, &hn, Estimator::Enumeration).unwrap();
        let reuse = averaged_fir_error(&eig, &corr, &model, &hn, &hn, Estimator::Enumeration).unwrap();
        assert!(robust <= reuse);
        let resid = &d.system.gram * d.taps.taps() - &d.system.rhs;
        assert!(resid.norm() <= 1e-8 * d.system.rhs.norm());
        assert!(averaged_fir_error(&eig, &corr, &model, &hn, &hn, Estimator::ClosedForm).is_err());
    }

    #[test]
    fn order_guard() {
        let (_, eig, model, corr) = instance(0.5, 2);
        let hn = FirCoefficients::new(vec![1.0]).unwrap();
        assert!(design_robust_fir(&eig, &corr, &model, &hn, 10, FirDesignOptions::default()).is_err());
        let big = EigenSystem {
            eigenvalues: DVector::from_fn(20, |i, _| i as f64),
            eigenvectors: DMatrix::identity(20, 20),
            spectral_gap_min: 1.0,
        };
        assert!(check_order(&big, 13, false).is_err());
        assert!(check_order(&big, 13, true).is_ok());
    }

    #[test]
    fn singular_gram_escalates_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, ridge) = solve_symmetric(&a, &b, 0.0).unwrap();
        assert_eq!(ridge, RIDGE_ESCALATION);
        assert!((x[0] + x[1] - 2.0).abs() < 1e-6);
        let zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0]);
        assert!(matches!(solve_symmetric(&zero, &b, 0.0), Err(Error::SingularSystem)));
    }

    #[test]
    fn fit_recovers_polynomial() {
        let lam = DVector::from_vec(vec![0.0, 0.5, 1.3, 2.0, 3.7, 5.1]);
        let h = FirCoefficients::new(vec![0.5, -1.0, 0.25]).unwrap();
        let fitted = fit_taps(&lam, &h.responses(&lam), 2).unwrap();
        assert!((fitted.taps() - h.taps()).amax() < 1e-10);
        let spec: FirSpec = serde_json::from_str(r#"{"order": 2, "taps": [0.5, -1.0, 0.25]}"#).unwrap();
        assert_eq!(spec.resolve(&lam).unwrap(), h);
        let bad: FirSpec = serde_json::from_str(r#"{"order": 3, "taps": [0.5]}"#).unwrap();
        assert!(bad.resolve(&lam).is_err());
        let fit: FirSpec = serde_json::from_str(r#"{"order": 2, "fit_to_mask": {"type":"heat","tau":0.5}}"#).unwrap();
        assert!(fit.resolve(&lam).is_ok());
    }
}
