//! Mollification machinery: bump kernels, lattice fields and their
//! regularization, occupation-density probes, fractional Sobolev norms of
//! paths, and coupled convergence studies of regularized systems.

mod convergence;
mod gridfield;
mod mollifier;
mod occupation;
mod sobolev;

pub use convergence::{
    regularization_convergence_study, w2inf_benchmark_drift, ConvergenceReport, ConvergenceSetup,
};
pub use gridfield::{mollify, GridField};
pub use mollifier::Mollifier;
pub use occupation::{
    occupation_density_estimate, occupation_refinement_probe, BoxPartition, OccupationProbe,
    OccupationTable,
};
pub use sobolev::{
    fractional_sobolev_energy, fractional_sobolev_norm, sobolev_dichotomy_study,
    SobolevDichotomyReport,
};

use thiserror::Error;

use crate::sde::SimError;

#[derive(Debug, Error)]
pub enum RegularityError {
    #[error(
        "kernel quadrature under-resolved: doubling the resolution moved the mass by {delta:.3e}"
    )]
    QuadratureUnderresolved { delta: f64 },
    #[error("lattice spacing {spacing:.3e} too coarse for kernel scale {scale:.3e} (need spacing <= scale/4)")]
    LatticeTooCoarse { spacing: f64, scale: f64 },
    #[error("convolution needs field values outside the lattice box; enlarge it to at least [{needed_lo:?}, {needed_hi:?}]")]
    SupportEscape {
        needed_lo: Vec<f64>,
        needed_hi: Vec<f64>,
    },
    #[error("fractional order s = {s} with p = {p} outside the imbedding regime 1/p < s < 1")]
    InvalidExponents { s: f64, p: f64 },
    #[error("path {path_index}: {source}")]
    Sim { path_index: u64, source: SimError },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0}")]
    InsufficientData(String),
}
