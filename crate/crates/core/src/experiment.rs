//! Ensemble experiments: robust versus non-optimized filters over the
//! perturbation level, and the noisy-design sweeps over σ² and γ.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, GraphSpec, SignPolicy};
use crate::error::{Error, Result};
use crate::fir::{
    averaged_fir_error, design_robust_fir, fir_matrix, fit_taps, realization_fir_error, FirCoefficients,
    FirDesignOptions, FirSpec,
};
use crate::graph::{eigendecompose, EigenSystem, Graph};
use crate::noisy::{design_noisy_robust_fir, evaluate_tradeoff, NoisyDesignProblem, TradeoffPoint};
use crate::oracle::{exact_perturbed_eigs, expectation_over_realizations, stream_seed, Method};
use crate::perturbation::{
    approx_perturbed_eigs, delta_laplacian, first_order_eigen, EdgeChange, FirstOrderCorrections, PerturbationModel,
    PerturbationRealization, PerturbedEdge, DEFAULT_GAP_TOLERANCE,
};
use crate::spectral::{averaged_mask_error, build_ideal_mask, optimal_robust_mask, Estimator, FilterMatrix, MaskSpec};

/// Uncertain-edge count up to which expectations are summed exactly.
const EXACT_LIMIT: usize = 10;
const MAX_SELECTION_ATTEMPTS: usize = 1000;
const MAX_GRAPH_ATTEMPTS: u64 = 100;

/// Nominal graph of one trial. Random graphs are redrawn until the
/// spectrum is simple enough for the first-order model.
pub fn trial_graph(spec: &GraphSpec, seed: u64, trial: u64) -> Result<(Graph, EigenSystem)> {
    let attempts = if spec.is_random() { MAX_GRAPH_ATTEMPTS } else { 1 };
    let mut last_gap = 0.0;
    for attempt in 0..attempts {
        let graph = spec.build(stream_seed(seed, trial * MAX_GRAPH_ATTEMPTS + attempt))?;
        let eig = eigendecompose(&graph.laplacian());
        if eig.spectral_gap_min > DEFAULT_GAP_TOLERANCE {
            return Ok((graph, eig));
        }
        last_gap = eig.spectral_gap_min;
    }
    Err(Error::DegenerateSpectrum { gap: last_gap, tolerance: DEFAULT_GAP_TOLERANCE })
}

/// Draws `round(fraction·|E|)` edges to toggle. Removals come from present
/// edges, additions from absent ones. With `keep_connected` the draw is
/// repeated until the fully perturbed graph is connected.
pub fn select_perturbation(
    graph: &Graph,
    fraction: f64,
    policy: SignPolicy,
    probability: f64,
    keep_connected: bool,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbationModel> {
    let k = (fraction * graph.num_edges() as f64).round() as usize;
    if k == 0 {
        return Ok(PerturbationModel::empty(graph));
    }
    let n = graph.num_nodes();
    let absent: Vec<(usize, usize)> =
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|&(a, b)| !graph.has_edge(a, b)).collect();
    let (removals, additions) = match policy {
        SignPolicy::Mixed => (k / 2, k - k / 2),
        SignPolicy::Remove => (k, 0),
        SignPolicy::Add => (0, k),
    };
    if removals > graph.num_edges() || additions > absent.len() {
        return Err(Error::InvalidModel(format!(
            "cannot toggle {removals} present and {additions} absent edges on this graph"
        )));
    }
    for _ in 0..MAX_SELECTION_ATTEMPTS {
        let mut edges = Vec::with_capacity(k);
        for i in sample(rng, graph.num_edges(), removals) {
            let (a, b) = graph.edges()[i];
            edges.push(PerturbedEdge::new(a, b, EdgeChange::Remove, probability));
        }
        for i in sample(rng, absent.len(), additions) {
            let (a, b) = absent[i];
            edges.push(PerturbedEdge::new(a, b, EdgeChange::Add, probability));
        }
        edges.sort_by_key(|e| e.edge);
        let model = PerturbationModel::new(graph, edges)?;
        if !keep_connected || model.apply(graph, &PerturbationRealization::all(model.len()))?.is_connected() {
            return Ok(model);
        }
    }
    Err(Error::GenerationFailed { retries: MAX_SELECTION_ATTEMPTS })
}

fn perturbation_rng(seed: u64, trial: u64, level: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(stream_seed(seed ^ 0x5eed_0f_ed6e, trial), level as u64))
}

fn sum_method(model: &PerturbationModel, samples: usize, seed: u64) -> Method {
    if model.uncertain_indices().len() <= EXACT_LIMIT {
        Method::Enumerate
    } else {
        Method::MonteCarlo { samples, seed }
    }
}

fn mask_estimator(model: &PerturbationModel) -> Estimator {
    if model.uncertain_indices().len() <= EXACT_LIMIT {
        Estimator::Enumeration
    } else {
        Estimator::ClosedForm
    }
}

fn fir_estimator(model: &PerturbationModel, samples: usize, seed: u64) -> Estimator {
    match sum_method(model, samples, seed) {
        Method::Enumerate => Estimator::Enumeration,
        Method::MonteCarlo { samples, seed } => Estimator::MonteCarlo { samples, seed },
    }
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One (trial, perturbation level) cell of the robustness comparison. The
/// non-optimized filters (NOF) are designed directly on the exactly
/// perturbed graph: the mask is evaluated on its spectrum and the taps are
/// refit there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig1Cell {
    pub trial: usize,
    pub fraction: f64,
    pub perturbed_edges: usize,
    /// `f(D̃*)` under the first-order model.
    pub f_robust: f64,
    /// `f` of the NOF mask under the first-order model.
    pub f_nof: f64,
    /// `g(h̃*)` under the first-order model.
    pub g_robust: f64,
    /// `g` of the NOF taps under the first-order model.
    pub g_nof: f64,
    /// `‖H − Ũ D Ũᵀ‖²_F` on the exact perturbed eigenbasis.
    pub f_robust_exact: f64,
    pub f_nof_exact: f64,
    /// `‖H − Σ h_k L̃^k‖²_F` on the exact perturbed Laplacian.
    pub g_robust_exact: f64,
    pub g_nof_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig1Row {
    pub fraction: f64,
    pub f_robust: f64,
    pub f_nof: f64,
    pub g_robust: f64,
    pub g_nof: f64,
    pub f_robust_exact: f64,
    pub f_nof_exact: f64,
    pub g_robust_exact: f64,
    pub g_nof_exact: f64,
    pub f_robust_stderr: f64,
    pub g_robust_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig1Result {
    pub cells: Vec<Fig1Cell>,
    pub rows: Vec<Fig1Row>,
}

struct Fig1Setup<'a> {
    graph: &'a Graph,
    eig: &'a EigenSystem,
    mask: &'a MaskSpec,
    fir_spec: &'a FirSpec,
    h_mask: FilterMatrix,
    h_fir_taps: FirCoefficients,
    h_fir: FilterMatrix,
    options: FirDesignOptions,
    mc_samples: usize,
}

fn fig1_cell(setup: &Fig1Setup, model: &PerturbationModel, seed: u64) -> Result<[f64; 8]> {
    let eig = setup.eig;
    let corr = first_order_eigen(eig, model)?;
    let robust_mask = optimal_robust_mask(eig, &corr, model, &setup.h_mask)?;
    let f_robust = averaged_mask_error(eig, &corr, model, &setup.h_mask, &robust_mask, mask_estimator(model))?;
    let order = setup.h_fir_taps.order();
    let design = design_robust_fir(eig, &corr, model, &setup.h_fir_taps, order, setup.options)?;
    let g_robust = averaged_fir_error(
        eig,
        &corr,
        model,
        &design.taps,
        &setup.h_fir_taps,
        fir_estimator(model, setup.mc_samples, seed),
    )?;

    let lap = setup.graph.laplacian();
    let per_outcome = expectation_over_realizations(
        model,
        |real| {
            let ex = exact_perturbed_eigs(setup.graph, model, real, eig)?;
            let lam = &ex.eigenvalues;
            let nof_mask = setup.mask.evaluate(lam)?;
            let nof_taps = match &setup.fir_spec.fit_to_mask {
                Some(m) => fit_taps(lam, &m.evaluate(lam)?, order)?,
                None => setup.h_fir_taps.clone(),
            };

            let approx = approx_perturbed_eigs(eig, &corr, real);
            let ut = &approx.eigenvectors;
            let mut r = ut.transpose() * setup.h_mask.matrix() * ut;
            for i in 0..r.nrows() {
                r[(i, i)] -= nof_mask[i];
            }
            let f_nof = r.norm_squared();
            let g_nof = realization_fir_error(eig, &corr, real, &nof_taps, &setup.h_fir);

            let f_robust_exact = (setup.h_mask.matrix() - ex.synthesize(robust_mask.values())).norm_squared();
            let f_nof_exact = (setup.h_mask.matrix() - ex.synthesize(&nof_mask)).norm_squared();
            let lt = lap.matrix() + delta_laplacian(model, real);
            let g_robust_exact = (setup.h_fir.matrix() - fir_matrix(&lt, &design.taps)).norm_squared();
            let g_nof_exact = (setup.h_fir.matrix() - fir_matrix(&lt, &nof_taps)).norm_squared();
            Ok(DVector::from_vec(vec![f_nof, g_nof, f_robust_exact, f_nof_exact, g_robust_exact, g_nof_exact]))
        },
        sum_method(model, setup.mc_samples, seed),
    )?;
    let d = &per_outcome.mean;
    Ok([f_robust, d[0], g_robust, d[1], d[2], d[3], d[4], d[5]])
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Config("at least one perturbation fraction is needed".into()));
    }
    Ok(())
}

pub fn run_fig1(config: &Config) -> Result<Fig1Result> {
    let spec = config.graph_spec();
    let fractions = &config.perturbation.fractions;
    check_fractions(fractions)?;
    let fir_spec = config.fir_spec();
    let options = FirDesignOptions { rhs_mode: config.rhs_mode, ..Default::default() };
    let trials = config.trial_count();

    let per_trial: Vec<Result<Vec<Fig1Cell>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (graph, eig) = trial_graph(&spec, config.seed, t as u64)?;
            let h_mask = FilterMatrix::from_mask(&eig, &build_ideal_mask(&eig, &config.mask)?);
            let h_fir_taps = fir_spec.resolve(&eig.eigenvalues)?;
            let h_fir = h_fir_taps.filter_matrix(&eig);
            let setup = Fig1Setup {
                graph: &graph,
                eig: &eig,
                mask: &config.mask,
                fir_spec: &fir_spec,
                h_mask,
                h_fir_taps,
                h_fir,
                options,
                mc_samples: config.mc_samples,
            };
            let mut cells = Vec::with_capacity(fractions.len());
            for (li, &fraction) in fractions.iter().enumerate() {
                let mut rng = perturbation_rng(config.seed, t as u64, li);
                let model = select_perturbation(
                    &graph,
                    fraction,
                    config.perturbation.sign_policy,
                    config.perturbation.probability,
                    config.perturbation.keep_connected,
                    &mut rng,
                )?;
                let v = fig1_cell(&setup, &model, stream_seed(config.seed, (t * fractions.len() + li) as u64))?;
                cells.push(Fig1Cell {
                    trial: t,
                    fraction,
                    perturbed_edges: model.len(),
                    f_robust: v[0],
                    f_nof: v[1],
                    g_robust: v[2],
                    g_nof: v[3],
                    f_robust_exact: v[4],
                    f_nof_exact: v[5],
                    g_robust_exact: v[6],
                    g_nof_exact: v[7],
                });
            }
            log::info!("fig1 trial {t} done");
            Ok(cells)
        })
        .collect();
    let mut cells = Vec::with_capacity(trials * fractions.len());
    for t in per_trial {
        cells.extend(t?);
    }
    let rows = fractions
        .iter()
        .enumerate()
        .map(|(li, &fraction)| {
            let at = || cells.iter().skip(li).step_by(fractions.len());
            let mean = |f: fn(&Fig1Cell) -> f64| mean_and_stderr(at().map(f)).0;
            Fig1Row {
                fraction,
                f_robust: mean(|c| c.f_robust),
                f_nof: mean(|c| c.f_nof),
                g_robust: mean(|c| c.g_robust),
                g_nof: mean(|c| c.g_nof),
                f_robust_exact: mean(|c| c.f_robust_exact),
                f_nof_exact: mean(|c| c.f_nof_exact),
                g_robust_exact: mean(|c| c.g_robust_exact),
                g_nof_exact: mean(|c| c.g_nof_exact),
                f_robust_stderr: mean_and_stderr(at().map(|c| c.f_robust)).1,
                g_robust_stderr: mean_and_stderr(at().map(|c| c.g_robust)).1,
            }
        })
        .collect();
    Ok(Fig1Result { cells, rows })
}

/// Per-trial outcome of one noisy design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisyCell {
    pub trial: usize,
    pub level: f64,
    pub noise_variance: f64,
    pub gamma: f64,
    pub point: TradeoffPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyRow {
    pub level: f64,
    pub noise_variance: f64,
    pub gamma: f64,
    pub d_filter: f64,
    pub d_xy: f64,
    pub d_xy_first_order: f64,
    pub d_filter_stderr: f64,
    pub d_xy_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoisyResult {
    pub cells: Vec<NoisyCell>,
    /// One row per (level, σ², γ) combination, in sweep order.
    pub rows: Vec<NoisyRow>,
}

/// Shared driver of the σ² and γ sweeps: every trial designs and evaluates
/// each `(level, σ², γ)` combination of the grid.
fn run_noisy(config: &Config, grid: &[(f64, f64)]) -> Result<NoisyResult> {
    let spec = config.graph_spec();
    let levels = &config.noise.levels;
    check_fractions(levels)?;
    let fir_spec = config.fir_spec();
    let options = FirDesignOptions { rhs_mode: config.rhs_mode, ..Default::default() };
    let trials = config.trial_count();
    let estimator = config.noise.estimator;

    let per_trial: Vec<Result<Vec<NoisyCell>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (graph, eig) = trial_graph(&spec, config.seed, t as u64)?;
            let x = config.noise.signal.build(&eig)?;
            let h_nominal = fir_spec.resolve(&eig.eigenvalues)?;
            let mut cells = Vec::with_capacity(levels.len() * grid.len());
            for (li, &level) in levels.iter().enumerate() {
                let mut rng = perturbation_rng(config.seed, t as u64, li);
                let model = select_perturbation(
                    &graph,
                    level,
                    config.perturbation.sign_policy,
                    config.perturbation.probability,
                    config.perturbation.keep_connected,
                    &mut rng,
                )?;
                let corr: FirstOrderCorrections = first_order_eigen(&eig, &model)?;
                let base = NoisyDesignProblem::new(x.clone(), 0.0, 0.0, h_nominal.clone(), h_nominal.order(), model)?;
                for &(noise_variance, gamma) in grid {
                    let problem = base.with_noise_variance(noise_variance)?.with_gamma(gamma)?;
                    let design = design_noisy_robust_fir(&problem, &eig, &corr, estimator, options)?;
                    let point = evaluate_tradeoff(&problem, &graph, &eig, &corr, &design.taps, estimator)?;
                    cells.push(NoisyCell { trial: t, level, noise_variance, gamma, point });
                }
            }
            log::info!("noisy trial {t} done");
            Ok(cells)
        })
        .collect();
    let mut cells = Vec::new();
    for t in per_trial {
        cells.extend(t?);
    }
    let per = levels.len() * grid.len();
    let mut rows = Vec::with_capacity(per);
    for (li, &level) in levels.iter().enumerate() {
        for (gi, &(noise_variance, gamma)) in grid.iter().enumerate() {
            let at = || cells.iter().skip(li * grid.len() + gi).step_by(per).map(|c| c.point);
            let (d_filter, d_filter_stderr) = mean_and_stderr(at().map(|p| p.d_filter));
            let (d_xy, d_xy_stderr) = mean_and_stderr(at().map(|p| p.d_xy));
            let d_xy_first_order = mean_and_stderr(at().map(|p| p.d_xy_first_order)).0;
            rows.push(NoisyRow {
                level,
                noise_variance,
                gamma,
                d_filter,
                d_xy,
                d_xy_first_order,
                d_filter_stderr,
                d_xy_stderr,
            });
        }
    }
    Ok(NoisyResult { cells, rows })
}

/// Sweep over the noise variance at fixed γ.
pub fn run_fig2(config: &Config) -> Result<NoisyResult> {
    let grid: Vec<(f64, f64)> = config.noise.variances.iter().map(|&v| (v, config.noise.gamma)).collect();
    run_noisy(config, &grid)
}

/// Sweep over γ at fixed noise variance.
pub fn run_fig3(config: &Config) -> Result<NoisyResult> {
    let grid: Vec<(f64, f64)> = config.noise.gammas.iter().map(|&g| (config.noise.noise_variance, g)).collect();
    run_noisy(config, &grid)
}

/// Fraction as a percentage, rounded so 0.14 prints as 14.
fn percent(fraction: f64) -> f64 {
    (fraction * 100.0 * 1e9).round() / 1e9
}

/// CSV table with a leading metadata comment line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn write_csv(&self, out: &mut dyn Write, config: &Config) -> std::io::Result<()> {
        writeln!(out, "# config-hash={} seed={} version={}", config.hash(), config.seed, env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// gnuplot script plotting every column against the first.
    pub fn gnuplot_script(&self, csv_path: &Path, title: &str) -> String {
        let mut s = format!(
            "set datafile separator ','\nset title '{title}'\nset xlabel '{}'\nset key autotitle columnhead\nplot ",
            self.header[0]
        );
        let series: Vec<String> = (2..=self.header.len())
            .map(|c| format!("'{}' every ::1 using 1:{c} with linespoints", csv_path.display()))
            .collect();
        s.push_str(&series.join(", \\\n     "));
        s.push('\n');
        s
    }
}

impl Fig1Result {
    pub fn table(&self) -> Table {
        Table {
            header: vec![
                "pct",
                "f_robust",
                "f_nof",
                "g_robust",
                "g_nof",
                "f_robust_exact",
                "f_nof_exact",
                "g_robust_exact",
                "g_nof_exact",
            ],
            rows: self
                .rows
                .iter()
                .map(|r| {
                    vec![
                        percent(r.fraction),
                        r.f_robust,
                        r.f_nof,
                        r.g_robust,
                        r.g_nof,
                        r.f_robust_exact,
                        r.f_nof_exact,
                        r.g_robust_exact,
                        r.g_nof_exact,
                    ]
                })
                .collect(),
        }
    }
}

impl NoisyResult {
    /// Rows `[σ², level, D_xy, stderr, D_filter]`.
    pub fn variance_table(&self) -> Table {
        Table {
            header: vec!["noise_variance", "pct", "d_xy", "d_xy_stderr", "d_filter"],
            rows: self
                .rows
                .iter()
                .map(|r| vec![r.noise_variance, percent(r.level), r.d_xy, r.d_xy_stderr, r.d_filter])
                .collect(),
        }
    }

    /// Rows `[γ, D_filter, D_xy, …]` per level.
    pub fn gamma_table(&self) -> Table {
        Table {
            header: vec!["gamma", "d_filter", "d_xy", "pct", "d_filter_stderr", "d_xy_stderr", "d_xy_first_order"],
            rows: self
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.gamma,
                        r.d_filter,
                        r.d_xy,
                        percent(r.level),
                        r.d_filter_stderr,
                        r.d_xy_stderr,
                        r.d_xy_first_order,
                    ]
                })
                .collect(),
        }
    }
}

/// Spearman rank correlation, ties given their mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = mean;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let rx = DVector::from_vec(rx);
    let ry = DVector::from_vec(ry);
    let cx = rx.add_scalar(-rx.mean());
    let cy = ry.add_scalar(-ry.mean());
    let denom = cx.norm() * cy.norm();
    if denom == 0.0 {
        return 0.0;
    }
    cx.dot(&cy) / denom
}

/// Nominal-filter matrix helpers shared by the CLI design command.
pub fn nominal_filters(eig: &EigenSystem, mask: &MaskSpec, fir: &FirSpec) -> Result<(FilterMatrix, FirCoefficients)> {
    Ok((FilterMatrix::from_mask(eig, &build_ideal_mask(eig, mask)?), fir.resolve(&eig.eigenvalues)?))
}
