//! Uncertain edge sets, the Laplacian perturbation they induce, and the
//! first-order eigenpair corrections.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{incidence_vector, Edge, EigenSystem, Graph};

/// Minimum eigenvalue separation accepted by [`first_order_eigen`].
pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-6;

/// Relative slack below zero before an approximate eigenvalue is flagged.
const NEGATIVITY_TOL: f64 = 1e-10;

/// Largest number of edges enumerated exhaustively.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeChange {
    Add,
    Remove,
}

impl EdgeChange {
    pub fn sigma(self) -> f64 {
        match self {
            EdgeChange::Add => 1.0,
            EdgeChange::Remove => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedEdge {
    pub edge: Edge,
    pub change: EdgeChange,
    pub prob: f64,
}

impl PerturbedEdge {
    pub fn new(a: usize, b: usize, change: EdgeChange, prob: f64) -> Self {
        Self { edge: (a.min(b), a.max(b)), change, prob }
    }

    pub fn sigma(&self) -> f64 {
        self.change.sigma()
    }
}

/// The uncertain edge set of a nominal graph. Edge `m` is toggled
/// independently with probability `prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationModel {
    num_nodes: usize,
    edges: Vec<PerturbedEdge>,
}

impl PerturbationModel {
    pub fn new(graph: &Graph, edges: Vec<PerturbedEdge>) -> Result<Self> {
        let n = graph.num_nodes();
        let mut seen = std::collections::BTreeSet::new();
        for pe in &edges {
            let (a, b) = pe.edge;
            if a == b || b >= n {
                return Err(Error::InvalidModel(format!("edge ({a}, {b}) is not a valid node pair")));
            }
            if !(0.0..=1.0).contains(&pe.prob) {
                return Err(Error::InvalidModel(format!("probability {} out of range", pe.prob)));
            }
            if !seen.insert(pe.edge) {
                return Err(Error::InvalidModel(format!("edge ({a}, {b}) listed twice")));
            }
            match (pe.change, graph.has_edge(a, b)) {
                (EdgeChange::Remove, false) => {
                    return Err(Error::InvalidModel(format!("cannot remove ({a}, {b}): not in the nominal graph")))
                }
                (EdgeChange::Add, true) => {
                    return Err(Error::InvalidModel(format!("cannot add ({a}, {b}): already in the nominal graph")))
                }
                _ => {}
            }
        }
        Ok(Self { num_nodes: n, edges })
    }

    pub fn empty(graph: &Graph) -> Self {
        Self { num_nodes: graph.num_nodes(), edges: Vec::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[PerturbedEdge] {
        &self.edges
    }

    pub fn probs(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.prob).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.sigma()).collect()
    }

    /// Same edge set with every probability replaced by `prob`.
    pub fn with_uniform_probability(&self, prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidModel(format!("probability {prob} out of range")));
        }
        let edges = self.edges.iter().map(|e| PerturbedEdge { prob, ..*e }).collect();
        Ok(Self { num_nodes: self.num_nodes, edges })
    }

    pub fn incidence_vector(&self, m: usize) -> DVector<f64> {
        let (a, b) = self.edges[m].edge;
        incidence_vector(self.num_nodes, a, b)
    }

    /// Indices of edges whose outcome is random (`0 < p < 1`).
    pub fn uncertain_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.edges[m].prob > 0.0 && self.edges[m].prob < 1.0).collect()
    }

    pub fn probability(&self, real: &PerturbationRealization) -> f64 {
        self.edges.iter().zip(&real.active).map(|(e, &z)| if z { e.prob } else { 1.0 - e.prob }).product()
    }

    /// The nominal graph with every active edge toggled.
    pub fn apply(&self, graph: &Graph, real: &PerturbationRealization) -> Result<Graph> {
        let toggled: Vec<Edge> = self.edges.iter().zip(&real.active).filter(|(_, &z)| z).map(|(e, _)| e.edge).collect();
        graph.toggled(&toggled)
    }

    pub fn from_json_str(graph: &Graph, s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in file.edges {
            if e.u == 0 || e.v == 0 {
                return Err(Error::InvalidModel("node indices are 1-based".into()));
            }
            let change = match e.sigma {
                1 => EdgeChange::Add,
                -1 => EdgeChange::Remove,
                s => return Err(Error::InvalidModel(format!("sigma must be +1 or -1, got {s}"))),
            };
            edges.push(PerturbedEdge::new(e.u - 1, e.v - 1, change, e.p));
        }
        Self::new(graph, edges)
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord { u: e.edge.0 + 1, v: e.edge.1 + 1, sigma: e.sigma() as i32, p: e.prob })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    edges: Vec<EdgeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    u: usize,
    v: usize,
    sigma: i32,
    p: f64,
}

/// One outcome of the edge indicators `Z_m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PerturbationRealization {
    pub active: Vec<bool>,
}

impl PerturbationRealization {
    pub fn none(m: usize) -> Self {
        Self { active: vec![false; m] }
    }

    pub fn all(m: usize) -> Self {
        Self { active: vec![true; m] }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &z)| z).map(|(m, _)| m)
    }
}

/// `ΔL = Σ_{m active} σ_m b_m b_mᵀ`.
pub fn delta_laplacian(model: &PerturbationModel, real: &PerturbationRealization) -> DMatrix<f64> {
    let n = model.num_nodes();
    let mut dl = DMatrix::zeros(n, n);
    for m in real.active_indices() {
        let (a, b) = model.edges()[m].edge;
        let s = model.edges()[m].sigma();
        dl[(a, a)] += s;
        dl[(b, b)] += s;
        dl[(a, b)] -= s;
        dl[(b, a)] -= s;
    }
    dl
}

/// Per-edge first-order building blocks, evaluated with every `Z_m = 1`.
#[derive(Debug, Clone)]
pub struct FirstOrderCorrections {
    /// `δλ_i = Σ_m σ_m q_{i,m}`.
    pub delta_lambda: DVector<f64>,
    /// `delta_u[m]` holds `δu_{i,m}` in column `i` (unsigned).
    pub delta_u: Vec<DMatrix<f64>>,
    /// `q_{i,m} = (u_i(a) - u_i(b))²`, shape `N × M`.
    pub q: DMatrix<f64>,
    pub sigma: Vec<f64>,
}

impl FirstOrderCorrections {
    pub fn num_edges(&self) -> usize {
        self.delta_u.len()
    }

    /// `σ_m δu_{i,m}` as an `N × M` matrix, one column per edge.
    pub fn signed_directions(&self, i: usize) -> DMatrix<f64> {
        let n = self.delta_lambda.len();
        let mut out = DMatrix::zeros(n, self.num_edges());
        for (m, du) in self.delta_u.iter().enumerate() {
            out.set_column(m, &(du.column(i) * self.sigma[m]));
        }
        out
    }
}

pub fn first_order_eigen(eig: &EigenSystem, model: &PerturbationModel) -> Result<FirstOrderCorrections> {
    first_order_eigen_with_tolerance(eig, model, DEFAULT_GAP_TOLERANCE)
}

pub fn first_order_eigen_with_tolerance(
    eig: &EigenSystem,
    model: &PerturbationModel,
    gap_tolerance: f64,
) -> Result<FirstOrderCorrections> {
    let n = eig.dim();
    if model.num_nodes() != n {
        return Err(Error::LengthMismatch(model.num_nodes(), n));
    }
    if eig.spectral_gap_min < gap_tolerance {
        return Err(Error::DegenerateSpectrum { gap: eig.spectral_gap_min, tolerance: gap_tolerance });
    }
    let u = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let m_count = model.len();
    let mut q = DMatrix::zeros(n, m_count);
    let mut delta_u = Vec::with_capacity(m_count);
    let mut delta_lambda = DVector::zeros(n);
    let sigma = model.sigmas();

    for (m, pe) in model.edges().iter().enumerate() {
        let (a, b) = pe.edge;
        // c_j = u_jᵀ b_m
        let c: DVector<f64> = DVector::from_iterator(n, (0..n).map(|j| u[(a, j)] - u[(b, j)]));
        let mut coeffs = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, m)] = c[i] * c[i];
            delta_lambda[i] += sigma[m] * c[i] * c[i];
            for j in 0..n {
                if j != i {
                    coeffs[(j, i)] = c[j] * c[i] / (lam[i] - lam[j]);
                }
            }
        }
        delta_u.push(u * coeffs);
    }
    Ok(FirstOrderCorrections { delta_lambda, delta_u, q, sigma })
}

/// First-order approximation of the perturbed eigensystem for one outcome.
#[derive(Debug, Clone)]
pub struct ApproxEigs {
    pub eigenvalues: DVector<f64>,
    /// Raw first-order basis; not re-orthonormalized.
    pub eigenvectors: DMatrix<f64>,
    /// Set when some approximate eigenvalue is negative.
    pub has_negative: bool,
    /// `‖ŨᵀŨ − I‖_F`.
    pub orthonormality_defect: f64,
}

pub fn approx_perturbed_eigs(
    eig: &EigenSystem,
    corr: &FirstOrderCorrections,
    real: &PerturbationRealization,
) -> ApproxEigs {
    let n = eig.dim();
    let mut lam = eig.eigenvalues.clone();
    let mut u = eig.eigenvectors.clone();
    for m in real.active_indices() {
        let s = corr.sigma[m];
        for i in 0..n {
            lam[i] += s * corr.q[(i, m)];
        }
        u += &corr.delta_u[m] * s;
    }
    let scale = eig.eigenvalues.amax().max(1.0);
    let has_negative = lam.iter().any(|&v| v < -NEGATIVITY_TOL * scale);
    let orthonormality_defect = (u.transpose() * &u - DMatrix::identity(n, n)).norm();
    ApproxEigs { eigenvalues: lam, eigenvectors: u, has_negative, orthonormality_defect }
}

pub fn sample_realization<R: Rng + ?Sized>(model: &PerturbationModel, rng: &mut R) -> PerturbationRealization {
    PerturbationRealization { active: model.edges().iter().map(|e| rng.random::<f64>() < e.prob).collect() }
}

pub fn sample_realization_seeded(model: &PerturbationModel, seed: u64) -> PerturbationRealization {
    sample_realization(model, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Iterator over weighted realizations. Realization `k` activates the
/// varying edges whose bit is set in `k`.
#[derive(Debug, Clone)]
pub struct Realizations {
    base: Vec<bool>,
    varying: Vec<usize>,
    probs: Vec<f64>,
    next: u64,
    end: u64,
}

impl Realizations {
    /// Number of outcomes in the full range, independent of iteration state.
    pub fn total(&self) -> u64 {
        self.end
    }

    /// Outcome `k` of the full range.
    pub fn at(&self, k: u64) -> (PerturbationRealization, f64) {
        let mut active = self.base.clone();
        let mut weight = 1.0;
        for (bit, &m) in self.varying.iter().enumerate() {
            let z = (k >> bit) & 1 == 1;
            active[m] = z;
            weight *= if z { self.probs[m] } else { 1.0 - self.probs[m] };
        }
        (PerturbationRealization { active }, weight)
    }
}

impl Iterator for Realizations {
    type Item = (PerturbationRealization, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let k = self.next;
        self.next += 1;
        Some(self.at(k))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Realizations {}

/// All `2^M` outcomes with their probabilities.
pub fn enumerate_realizations(model: &PerturbationModel) -> Result<Realizations> {
    enumerate_realizations_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_realizations_with_cap(model: &PerturbationModel, cap: usize) -> Result<Realizations> {
    let varying: Vec<usize> = (0..model.len()).collect();
    realizations_over(model, varying, vec![false; model.len()], cap)
}

/// Outcomes with nonzero probability only: edges with `p = 1` are always
/// active, `p = 0` never, and only the uncertain edges are enumerated. The
/// cap applies to the number of uncertain edges.
pub fn enumerate_support(model: &PerturbationModel, cap: usize) -> Result<Realizations> {
    let base = model.edges().iter().map(|e| e.prob >= 1.0).collect();
    realizations_over(model, model.uncertain_indices(), base, cap)
}

fn realizations_over(
    model: &PerturbationModel,
    varying: Vec<usize>,
    base: Vec<bool>,
    cap: usize,
) -> Result<Realizations> {
    if varying.len() > cap || varying.len() >= 63 {
        return Err(Error::CapExceeded { count: varying.len(), cap });
    }
    let end = 1u64 << varying.len();
    Ok(Realizations { base, varying, probs: model.probs(), next: 0, end })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::eigendecompose;
    use approx::assert_abs_diff_eq;

    pub(crate) fn path_plus_chord() -> (Graph, PerturbationModel) {
        let g = Graph::path(3);
        let model = PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 2, EdgeChange::Add, 1.0)]).unwrap();
        (g, model)
    }

    #[test]
    fn delta_laplacian_single_chord() {
        let (_, model) = path_plus_chord();
        let dl = delta_laplacian(&model, &PerturbationRealization::all(1));
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0]);
        assert_eq!(dl, expected);
        assert_eq!(delta_laplacian(&model, &PerturbationRealization::none(1)), DMatrix::zeros(3, 3));
    }

    #[test]
    fn model_invariants_enforced() {
        let g = Graph::path(3);
        assert!(PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 1, EdgeChange::Add, 0.5)]).is_err());
        assert!(PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 2, EdgeChange::Remove, 0.5)]).is_err());
        let dup =
            vec![PerturbedEdge::new(0, 1, EdgeChange::Remove, 0.5), PerturbedEdge::new(1, 0, EdgeChange::Add, 0.5)];
        assert!(PerturbationModel::new(&g, dup).is_err());
        assert!(PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 2, EdgeChange::Add, 1.5)]).is_err());
    }

    #[test]
    fn chord_corrections_by_hand() {
        let (g, model) = path_plus_chord();
        let eig = eigendecompose(&g.laplacian());
        let corr = first_order_eigen(&eig, &model).unwrap();
        assert_abs_diff_eq!(corr.delta_lambda[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.delta_lambda[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(corr.delta_lambda[2], 0.0, epsilon = 1e-12);
        assert!(corr.delta_u[0].amax() < 1e-12);
        let approx = approx_perturbed_eigs(&eig, &corr, &PerturbationRealization::all(1));
        for (a, b) in approx.eigenvalues.iter().zip([0.0, 3.0, 3.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        assert!(!approx.has_negative);
    }

    #[test]
    fn triangle_is_degenerate() {
        let g = Graph::complete(3);
        let eig = eigendecompose(&g.laplacian());
        let model = PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 1, EdgeChange::Remove, 0.5)]).unwrap();
        assert!(matches!(first_order_eigen(&eig, &model), Err(Error::DegenerateSpectrum { .. })));
    }

    #[test]
    fn corrections_structural_invariants() {
        let (g, eig) = crate::testutil::distinct_sbm(6, 0.8, 0.2, 11);
        let mut edges = Vec::new();
        for &(a, b) in g.edges().iter().take(3) {
            edges.push(PerturbedEdge::new(a, b, EdgeChange::Remove, 0.4));
        }
        let add = (1..12).find(|&j| !g.has_edge(0, j)).unwrap();
        edges.push(PerturbedEdge::new(0, add, EdgeChange::Add, 0.7));
        let model = PerturbationModel::new(&g, edges).unwrap();
        let corr = first_order_eigen(&eig, &model).unwrap();
        for m in 0..model.len() {
            assert!(corr.q[(0, m)].abs() < 1e-12);
            for i in 0..12 {
                assert!(corr.q[(i, m)] >= 0.0);
                let dot = eig.vector(i).dot(&corr.delta_u[m].column(i));
                assert!(dot.abs() < 1e-10);
            }
        }
        let approx = approx_perturbed_eigs(&eig, &corr, &PerturbationRealization::none(4));
        assert_eq!(approx.eigenvalues, eig.eigenvalues);
        assert_eq!(approx.eigenvectors, eig.eigenvectors);
    }

    #[test]
    fn enumeration_weights() {
        let g = Graph::path(4);
        let two = PerturbationModel::new(
            &g,
            vec![PerturbedEdge::new(0, 1, EdgeChange::Remove, 0.5), PerturbedEdge::new(0, 2, EdgeChange::Add, 0.5)],
        )
        .unwrap();
        let w: Vec<f64> = enumerate_realizations(&two).unwrap().map(|(_, w)| w).collect();
        assert_eq!(w, vec![0.25; 4]);

        let one = PerturbationModel::new(&g, vec![PerturbedEdge::new(0, 3, EdgeChange::Add, 0.3)]).unwrap();
        let w: Vec<f64> = enumerate_realizations(&one).unwrap().map(|(_, w)| w).collect();
        assert_abs_diff_eq!(w[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_cap() {
        let g = Graph::new(30, []).unwrap();
        let edges = (1..22).map(|j| PerturbedEdge::new(0, j, EdgeChange::Add, 0.5)).collect();
        let model = PerturbationModel::new(&g, edges).unwrap();
        assert!(matches!(enumerate_realizations(&model), Err(Error::CapExceeded { count: 21, cap: 20 })));
    }

    #[test]
    fn support_skips_deterministic_edges() {
        let g = Graph::new(30, []).unwrap();
        let mut edges: Vec<_> = (1..25).map(|j| PerturbedEdge::new(0, j, EdgeChange::Add, 1.0)).collect();
        edges.push(PerturbedEdge::new(1, 2, EdgeChange::Add, 0.0));
        edges.push(PerturbedEdge::new(1, 3, EdgeChange::Add, 0.25));
        let model = PerturbationModel::new(&g, edges).unwrap();
        let all: Vec<_> = enumerate_support(&model, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(all.len(), 2);
        assert_abs_diff_eq!(all[0].1 + all[1].1, 1.0, epsilon = 1e-15);
        assert!(all[1].0.active[25]);
        assert!(!all[0].0.active[24]);
        assert!(all[0].0.active[0]);
    }

    #[test]
    fn sampling_extremes_and_frequency() {
        let g = Graph::new(12, []).unwrap();
        let mk = |p| {
            let edges = (1..11).map(|j| PerturbedEdge::new(0, j, EdgeChange::Add, p)).collect();
            PerturbationModel::new(&g, edges).unwrap()
        };
        assert_eq!(sample_realization_seeded(&mk(1.0), 3), PerturbationRealization::all(10));
        assert_eq!(sample_realization_seeded(&mk(0.0), 3), PerturbationRealization::none(10));
        let half = mk(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for m in sample_realization(&half, &mut rng).active_indices() {
                counts[m] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::path(4);
        let text = r#"{"edges": [{"u":1,"v":2,"sigma":-1,"p":0.1},{"u":1,"v":4,"sigma":1,"p":0.9}]}"#;
        let model = PerturbationModel::from_json_str(&g, text).unwrap();
        assert_eq!(model.len(), 2);
        assert_eq!(model.edges()[1].edge, (0, 3));
        let back = PerturbationModel::from_json_str(&g, &model.to_json_string()).unwrap();
        assert_eq!(back, model);
        let bad = r#"{"edges": [{"u":1,"v":3,"sigma":2,"p":0.1}]}"#;
        assert!(PerturbationModel::from_json_str(&g, bad).is_err());
    }
}
