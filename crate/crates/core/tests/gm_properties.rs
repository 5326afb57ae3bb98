//! Property suite for splitting, collapsing and propagating Gaussian mixtures.

mod common;

use common::{min_eigenvalue, spd_from};
use gmsteer::dynamics::{propagate_component, propagate_mixture, DynamicsModel};
use gmsteer::{collapse, split_gaussian, Gaussian, GaussianMixture, SplitLibrary, WeightedComponent};
use nalgebra::{DMatrix, DVector, Matrix6};
use proptest::prelude::*;

fn gaussian_strategy() -> impl Strategy<Value = Gaussian> {
    (prop::collection::vec(-10.0..10.0f64, 6), prop::collection::vec(-1.0..1.0f64, 21), -6.0..0.0f64).prop_map(
        |(mean, entries, log_scale)| {
            let cov = spd_from(&entries, 6, 1e-6) * 10f64.powf(log_scale);
            Gaussian::new(DVector::from_vec(mean), cov).unwrap()
        },
    )
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::sample::subsequence((0..6).collect::<Vec<_>>(), 0..=2).prop_shuffle()
}

fn scale_of(g: &Gaussian) -> f64 {
    g.mean().amax().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn split_preserves_mean_weights_and_psd(g in gaussian_strategy(), dims in dims_strategy()) {
        let lib = SplitLibrary::table_l3();
        let mix = split_gaussian(&g, &dims, &lib).unwrap();
        prop_assert_eq!(mix.len(), 3usize.pow(dims.len() as u32));
        let total: f64 = mix.weights().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(mix.weights().all(|w| w > 0.0));
        let trace = g.cov().trace();
        for c in mix.components() {
            prop_assert!(min_eigenvalue(c.gaussian.cov()) >= -1e-12 * trace);
        }
        let merged = mix.collapse();
        prop_assert!((merged.mean() - g.mean()).amax() <= 1e-12 * scale_of(&g));
        // The library variance is below one, so the merged covariance never exceeds the original.
        let deficit = g.cov() - merged.cov();
        prop_assert!(min_eigenvalue(&deficit) >= -1e-12 * trace);
        prop_assert!(deficit.trace() <= (1.0 - lib.variance()) * trace * (1.0 + 1e-9));
    }

    #[test]
    fn collapse_preserves_total_moments(
        weights in prop::collection::vec(0.01..1.0f64, 1..6),
        seeds in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 27), 6),
    ) {
        let total: f64 = weights.iter().sum();
        let comps: Vec<WeightedComponent> = weights
            .iter()
            .zip(&seeds)
            .map(|(w, s)| WeightedComponent {
                weight: w / total,
                gaussian: Gaussian::new(DVector::from_column_slice(&s[21..27]), spd_from(&s[..21], 6, 1e-3)).unwrap(),
            })
            .collect();
        let mix = GaussianMixture::new(comps.clone()).unwrap();
        let merged = collapse(&mix);
        // Second moment about the origin is conserved.
        let mut second = DMatrix::zeros(6, 6);
        let mut first = DVector::zeros(6);
        for c in &comps {
            let m = c.gaussian.mean();
            second += (c.gaussian.cov() + m * m.transpose()) * c.weight;
            first += m * c.weight;
        }
        prop_assert!((merged.mean() - &first).amax() < 1e-12);
        let merged_second = merged.cov() + merged.mean() * merged.mean().transpose();
        prop_assert!((merged_second - second).amax() < 1e-11);
        prop_assert!(min_eigenvalue(merged.cov()) > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Under linear dynamics each component maps exactly, so propagating then collapsing
    /// equals collapsing then propagating.
    #[test]
    fn linear_propagation_commutes_with_collapse(
        g in gaussian_strategy(),
        dims in dims_strategy(),
        a_entries in prop::collection::vec(-0.5..0.5f64, 36),
        span in 0.1..2.0f64,
    ) {
        let model = DynamicsModel::linear(Matrix6::from_column_slice(&a_entries));
        let mix = split_gaussian(&g, &dims, &SplitLibrary::table_l3()).unwrap();
        let moved = propagate_mixture(&mix, 0.0, span, &model).unwrap();
        prop_assert!(moved.weights().zip(mix.weights()).all(|(a, b)| a == b));
        let direct = propagate_component(&mix.collapse(), 0.0, span, &model).unwrap().gaussian_out;
        let merged = moved.collapse();
        let mean_scale = direct.mean().amax().max(1.0);
        prop_assert!((merged.mean() - direct.mean()).amax() < 1e-8 * mean_scale);
        let cov_scale = direct.cov().amax();
        prop_assert!((merged.cov() - direct.cov()).amax() < 1e-7 * cov_scale);
    }
}
