use crate::graph::{eigendecompose, generate_sbm, EigenSystem, Graph};

/// First connected SBM sample from `seed` upwards whose spectrum is well
/// separated.
pub(crate) fn distinct_sbm(n_per: usize, p_in: f64, p_out: f64, seed: u64) -> (Graph, EigenSystem) {
    (seed..seed + 1000)
        .map(|s| generate_sbm(n_per, p_in, p_out, s * 7919).unwrap())
        .map(|g| {
            let eig = eigendecompose(&g.laplacian());
            (g, eig)
        })
        .find(|(_, eig)| eig.spectral_gap_min > 1e-3)
        .expect("no well-separated sample")
}
