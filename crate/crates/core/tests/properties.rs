//! Property tests for the determinism and estimator invariants.

use proptest::prelude::*;

use hgsde::girsanov::{stochastic_exponential, DriftCorrectionSeries};
use hgsde::mc::mean_and_se;
use hgsde::{sample_brownian, TimeGrid};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Regenerating a driver from the same key is bit-identical, and the
    /// path starts at exactly zero.
    #[test]
    fn brownian_substreams_are_reproducible(
        seed in any::<u64>(),
        path_index in 0u64..1024,
        n_steps in 1usize..64,
        k in 1usize..4,
    ) {
        let grid = TimeGrid::to_horizon(1.0, n_steps).unwrap();
        let a = sample_brownian(grid, k, seed, path_index);
        let b = sample_brownian(grid, k, seed, path_index);
        prop_assert_eq!(a.increments(), b.increments());
        prop_assert!(a.value_at(0).iter().all(|v| *v == 0.0));
        prop_assert_eq!(a.increments().len(), n_steps * k);
    }

    /// Grid nodes are monotone and cover the span exactly.
    #[test]
    fn grid_nodes_are_monotone(
        t0 in -100.0f64..100.0,
        span in 1e-6f64..1e4,
        n_steps in 1usize..512,
    ) {
        let grid = TimeGrid::new(t0, t0 + span, n_steps).unwrap();
        for i in 0..n_steps {
            prop_assert!(grid.node(i) < grid.node(i + 1));
        }
        prop_assert!((grid.node(n_steps) - (t0 + span)).abs() <= 1e-9 * span.max(1.0));
        prop_assert!((grid.dt() * n_steps as f64 - span).abs() <= 1e-12 * span);
    }

    /// The weighted estimator with unit weights is the arithmetic mean,
    /// bit for bit, and the standard error is nonnegative.
    #[test]
    fn unit_weight_estimate_is_plain_mean(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let est = mean_and_se(&values);
        let manual = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert_eq!(est.mean.to_bits(), manual.to_bits());
        prop_assert!(est.std_error >= 0.0);
    }

    /// The stochastic exponential stays positive with log 0 at the start,
    /// and its quadratic variation is non-decreasing, whatever the bounded
    /// integrand.
    #[test]
    fn stochastic_exponential_is_positive(
        seed in any::<u64>(),
        u_values in prop::collection::vec(-5.0f64..5.0, 9),
    ) {
        let grid = TimeGrid::to_horizon(1.0, 8).unwrap();
        let driver = sample_brownian(grid, 1, seed, 0);
        let series = DriftCorrectionSeries::from_values(grid, 1, u_values).unwrap();
        let w = stochastic_exponential(&series, &driver).unwrap();
        prop_assert_eq!(w.log_d(0), 0.0);
        for node in 0..=8 {
            prop_assert!(w.d(node) > 0.0);
        }
        for node in 0..8 {
            prop_assert!(w.quadratic_variation(node + 1) >= w.quadratic_variation(node));
        }
    }
}
