use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_gf::graph::{eigendecompose, generate_er, Graph};
use robust_gf::moments::{moments, WeightedBernoulliSum};
use robust_gf::perturbation::{delta_laplacian, enumerate_realizations, EdgeChange, PerturbationModel, PerturbedEdge};
use robust_gf::spectral::{averaged_mask_error, optimal_robust_mask, Estimator, SpectralMask};
use robust_gf::validate::random_instance;

fn bernoulli_sum() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|m| (prop::collection::vec(-3.0..3.0f64, m), prop::collection::vec(0.0..=1.0f64, m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_psd_with_zero_row_sums(n in 3usize..15, p in 0.3..0.9f64, seed in any::<u64>()) {
        let g = generate_er(n, p, seed).unwrap();
        let lap = g.laplacian();
        for r in lap.matrix().row_iter() {
            prop_assert!(r.sum().abs() < 1e-12);
        }
        let eig = eigendecompose(&lap);
        prop_assert!(eig.eigenvalues[0].abs() < 1e-9);
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-9));
        prop_assert!(eig.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((eig.eigenvalues.sum() - 2.0 * g.num_edges() as f64).abs() < 1e-8);
    }

    #[test]
    fn moments_match_mean_and_variance((w, p) in bernoulli_sum()) {
        let t = moments(&WeightedBernoulliSum::new(w.clone(), p.clone()).unwrap(), 4);
        let mean: f64 = w.iter().zip(&p).map(|(w, p)| w * p).sum();
        let var: f64 = w.iter().zip(&p).map(|(w, p)| w * w * p * (1.0 - p)).sum();
        prop_assert_eq!(t.get(0), 1.0);
        prop_assert!((t.get(1) - mean).abs() < 1e-12);
        prop_assert!((t.get(2) - mean * mean - var).abs() < 1e-10);
        prop_assert!(t.get(4) >= t.get(2) * t.get(2) - 1e-10);
    }

    #[test]
    fn realization_weights_sum_to_one(probs in prop::collection::vec(0.0..=1.0f64, 1..6)) {
        let g = Graph::complete(7);
        let edges = probs.iter().enumerate().map(|(k, &p)| PerturbedEdge::new(k, k + 1, EdgeChange::Remove, p)).collect();
        let model = PerturbationModel::new(&g, edges).unwrap();
        let reals = enumerate_realizations(&model).unwrap();
        prop_assert_eq!(reals.len(), 1 << probs.len());
        let total: f64 = reals.map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_laplacian_is_signed_sum(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 10, 5, 2).unwrap();
        for (real, _) in enumerate_realizations(&inst.model).unwrap() {
            let dl = delta_laplacian(&inst.model, &real);
            prop_assert!((&dl - dl.transpose()).amax() == 0.0);
            let removed: f64 = real.active.iter().zip(inst.model.edges())
                .filter(|(a, _)| **a)
                .map(|(_, e)| e.sigma())
                .sum();
            prop_assert!((dl.trace() - 2.0 * removed).abs() < 1e-12);
        }
    }

    #[test]
    fn robust_mask_beats_nominal_mask(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 10, 5, 2).unwrap();
        let (eig, corr, model) = (&inst.eig, &inst.corr, &inst.model);
        let robust = optimal_robust_mask(eig, corr, model, &inst.filter).unwrap();
        let nominal = SpectralMask((eig.eigenvectors.transpose() * inst.filter.matrix() * &eig.eigenvectors).diagonal());
        let f = |m: &SpectralMask| averaged_mask_error(eig, corr, model, &inst.filter, m, Estimator::ClosedForm).unwrap();
        prop_assert!(f(&robust) <= f(&nominal) + 1e-12);
    }
}
