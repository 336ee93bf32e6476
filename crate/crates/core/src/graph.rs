//! Undirected unweighted graphs, their incidence and Laplacian matrices, and
//! the ordered Laplacian eigendecomposition.
//!
//! Node indices are 0-based in the API. The JSON and edge-list file formats
//! use 1-based indices and are converted at the boundary.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retry budget for the connected-graph generators.
pub const DEFAULT_MAX_RETRIES: usize = 100;

/// An undirected edge stored with `lo < hi`.
pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<Edge>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Endpoints are reordered so
    /// that the lower index comes first and the list is sorted; self-loops,
    /// duplicates and out-of-range endpoints are rejected.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range for {num_nodes} nodes")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        if let Some(w) = out.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!("duplicate edge {:?}", w[0])));
        }
        Ok(Self { num_nodes, edges: out })
    }

    pub fn complete(num_nodes: usize) -> Self {
        let edges = (0..num_nodes).flat_map(|i| (i + 1..num_nodes).map(move |j| (i, j))).collect();
        Self { num_nodes, edges }
    }

    pub fn path(num_nodes: usize) -> Self {
        let edges = (1..num_nodes).map(|i| (i - 1, i)).collect();
        Self { num_nodes, edges }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.num_nodes, &self.edges)
    }

    /// Returns the graph with every edge in `toggled` flipped: present edges
    /// are removed, absent ones added.
    pub fn toggled(&self, toggled: &[Edge]) -> Result<Self> {
        let mut edges = self.edges.clone();
        for &(a, b) in toggled {
            let e = (a.min(b), a.max(b));
            match edges.binary_search(&e) {
                Ok(pos) => {
                    edges.remove(pos);
                }
                Err(pos) => edges.insert(pos, e),
            }
        }
        Graph::new(self.num_nodes, edges)
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        build_incidence(self)
    }

    pub fn laplacian(&self) -> Laplacian {
        build_laplacian(&self.incidence())
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile { n: self.num_nodes, edges: self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect() };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        Self::from_one_based(file.n, file.edges.iter().map(|e| (e[0], e[1])))
    }

    /// Parses the `i j` per-line edge-list format. Blank lines and lines
    /// starting with `#` are skipped; the node count is the largest index
    /// seen.
    pub fn from_edge_list_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => pairs.push((a, b)),
                _ => return Err(Error::InvalidGraph(format!("line {}: expected two node indices", lineno + 1))),
            }
        }
        let n = pairs.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
        Self::from_one_based(n, pairs)
    }

    /// Loads a graph from disk; content starting with `{` is read as JSON,
    /// anything else as an edge list.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json_str(&text)
        } else {
            Self::from_edge_list_str(&text)
        }
    }

    fn from_one_based(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = Vec::new();
        for (a, b) in pairs {
            if a == 0 || b == 0 {
                return Err(Error::InvalidGraph("node indices are 1-based".into()));
            }
            edges.push((a - 1, b - 1));
        }
        Graph::new(n, edges)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
}

fn is_connected(n: usize, edges: &[Edge]) -> bool {
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Signed incidence vector of the pair `(a, b)`: `+1` at the lower index and
/// `-1` at the higher one.
pub fn incidence_vector(num_nodes: usize, a: usize, b: usize) -> DVector<f64> {
    let mut v = DVector::zeros(num_nodes);
    v[a.min(b)] = 1.0;
    v[a.max(b)] = -1.0;
    v
}

/// Oriented node-by-edge incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(pub DMatrix<f64>);

impl IncidenceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_incidence(graph: &Graph) -> IncidenceMatrix {
    let mut b = DMatrix::zeros(graph.num_nodes(), graph.num_edges());
    for (m, &(lo, hi)) in graph.edges().iter().enumerate() {
        b[(lo, m)] = 1.0;
        b[(hi, m)] = -1.0;
    }
    IncidenceMatrix(b)
}

/// Combinatorial graph Laplacian `B Bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(pub DMatrix<f64>);

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

pub fn build_laplacian(inc: &IncidenceMatrix) -> Laplacian {
    let b = inc.matrix();
    Laplacian(b * b.transpose())
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as
/// orthonormal columns. Each eigenvector is signed so that its entry of
/// largest magnitude is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Smallest separation between consecutive eigenvalues. Zero for a
    /// repeated eigenvalue, `+inf` for a 1×1 system.
    pub spectral_gap_min: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.eigenvectors.column(i)
    }

    /// `U diag(values) Uᵀ`.
    pub fn synthesize(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= values[j];
        }
        scaled * u.transpose()
    }
}

/// Tolerance under which two eigenvector entries count as equally large for
/// the sign convention.
const SIGN_TIE_TOL: f64 = 1e-12;

pub fn eigendecompose(lap: &Laplacian) -> EigenSystem {
    eigendecompose_symmetric(lap.matrix())
}

pub fn eigendecompose_symmetric(matrix: &DMatrix<f64>) -> EigenSystem {
    let n = matrix.nrows();
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    apply_sign_convention(&mut eigenvectors);

    let spectral_gap_min = eigenvalues.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);

    EigenSystem { eigenvalues, eigenvectors, spectral_gap_min }
}

/// Flips each column so that its largest-magnitude entry (first such index
/// on near-ties) is positive. Idempotent.
pub fn apply_sign_convention(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let max = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(pivot) = col.iter().position(|v| v.abs() >= max - SIGN_TIE_TOL) {
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidGraph(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn sample_until_connected(
    seed: u64,
    max_retries: usize,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> Graph,
) -> Result<Graph> {
    for attempt in 0..max_retries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let g = sample(&mut rng);
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailed { retries: max_retries })
}

/// Two-block stochastic block model on `2 * n_per_cluster` nodes. Nodes
/// `0..n_per_cluster` form the first cluster. Resamples with seed `seed + k`
/// until the graph is connected.
pub fn generate_sbm(n_per_cluster: usize, p_intra: f64, p_inter: f64, seed: u64) -> Result<Graph> {
    generate_sbm_with_retries(n_per_cluster, p_intra, p_inter, seed, DEFAULT_MAX_RETRIES)
}

pub fn generate_sbm_with_retries(
    n_per_cluster: usize,
    p_intra: f64,
    p_inter: f64,
    seed: u64,
    max_retries: usize,
) -> Result<Graph> {
    if n_per_cluster == 0 {
        return Err(Error::InvalidGraph("cluster size must be positive".into()));
    }
    check_probability("p_intra", p_intra)?;
    check_probability("p_inter", p_inter)?;
    let n = 2 * n_per_cluster;
    sample_until_connected(seed, max_retries, |rng| {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let same = (i < n_per_cluster) == (j < n_per_cluster);
                let p = if same { p_intra } else { p_inter };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph { num_nodes: n, edges }
    })
}

/// Erdős–Rényi `G(n, p)`, resampled until connected.
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    generate_er_with_retries(n, p, seed, DEFAULT_MAX_RETRIES)
}

pub fn generate_er_with_retries(n: usize, p: f64, seed: u64, max_retries: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph must have at least one node".into()));
    }
    check_probability("p", p)?;
    sample_until_connected(seed, max_retries, |rng| {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Graph { num_nodes: n, edges }
    })
}
