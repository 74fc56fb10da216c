//! Numerical toolkit for stochastic dynamics near hyperbolic fixed points.
//!
//! The crate simulates SDEs `dX = f(X) dt + eps sigma(X) dB` on uniform
//! grids, linearizes them around fixed points with an exact Taylor
//! remainder, and verifies by Girsanov reweighting that the nonlinear law
//! matches the perturbed linear one. Two companion modules cover the
//! slow-fast regime (slow-manifold tracing and sample-path concentration)
//! and the mollification machinery used to relax coefficient regularity
//! (bump kernels, occupation-density probes, fractional Sobolev norms).
//!
//! Everything is deterministic: Brownian substreams are counter-based and
//! keyed on `(seed, path_index, step)`, parallel runs reduce in path order,
//! and repeated runs with one seed are bit-identical.
//!
//! ```
//! use hgsde::{euler_maruyama, sample_brownian, DiffusionField, TimeGrid, VectorField};
//!
//! // Ornstein-Uhlenbeck path on [0, 1]: dX = -X dt + 0.5 dB.
//! let grid = TimeGrid::to_horizon(1.0, 1_000).unwrap();
//! let drift = VectorField::scalar(|x| -x);
//! let noise = DiffusionField::scalar(|_| 1.0);
//! let driver = sample_brownian(grid, 1, 42, 0);
//! let path = euler_maruyama(&drift, &noise, 0.5, &[1.0], &driver).unwrap();
//! assert_eq!(path.state(0), &[1.0]);
//! assert!(path.terminal()[0].is_finite());
//! ```

pub mod brownian;
pub mod expr;
pub mod field;
pub mod girsanov;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod linearize;
pub mod mc;
pub mod regularity;
pub mod sde;
pub mod slowfast;

pub use brownian::{derive_seed, sample_brownian, BrownianPath};
pub use field::{DiffusionField, DomainBox, VectorField};
pub use girsanov::{
    drift_correction, novikov_estimate, range_decomposition, stochastic_exponential,
    verify_measure_equivalence, CorrectionMode, CorrectionOpts, DriftCorrectionSeries,
    EquivalenceOpts, EquivalenceReport, GirsanovError, GirsanovPipeline, GirsanovWeight,
    MartingaleReport, NovikovReport, RangeDecomposition,
};
pub use grid::TimeGrid;
pub use linalg::{solve_lyapunov, LinAlgError};
pub use linearize::{
    classify_hyperbolicity, find_fixed_point, linearize, Classification, FixedPoint,
    LinearizeError, LinearizedSystem,
};
pub use mc::{mc_estimate, mean_and_se, McEstimate, Observable};
pub use regularity::{
    fractional_sobolev_norm, mollify, occupation_density_estimate, occupation_refinement_probe,
    regularization_convergence_study, sobolev_dichotomy_study, w2inf_benchmark_drift, BoxPartition,
    ConvergenceReport, ConvergenceSetup, GridField, Mollifier, RegularityError,
};
pub use sde::{euler_maruyama, simulate_ensemble, Ensemble, EnsembleError, SdePath, SimError};
pub use slowfast::{
    check_uniform_stability, concentration_statistics, nondegeneracy_check, simulate_slowfast,
    trace_slow_manifold, ConcentrationReport, SlowFastError, SlowFastOpts, SlowFastSystem,
    SlowManifold, TraceOpts,
};
