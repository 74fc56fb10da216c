//! Euler-Maruyama integration and path ensembles.

use rayon::prelude::*;
use thiserror::Error;

use crate::brownian::{sample_brownian, BrownianPath};
use crate::field::{DiffusionField, VectorField};
use crate::grid::TimeGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state left the drift domain at node {node}")]
    DomainEscape { node: usize },
    #[error("non-finite state component at node {node}")]
    NonFinite { node: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("path {path_index} failed: {source}")]
    Path { path_index: u64, source: SimError },
    #[error("ensemble must contain at least one path")]
    Empty,
}

/// One discretized trajectory tied to the Brownian driver that produced it.
#[derive(Debug, Clone)]
pub struct SdePath {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>, // (n_steps + 1) * dim, node-major
    driver: BrownianPath,
}

impl SdePath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn driver(&self) -> &BrownianPath {
        &self.driver
    }

    pub fn state(&self, node: usize) -> &[f64] {
        &self.states[node * self.dim..(node + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps())
    }

    /// Scalar component `j` at every node.
    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.grid.n_nodes()).map(|i| self.state(i)[j]).collect()
    }

    /// Path in coordinates shifted by `origin` (`z = x - origin`), keeping
    /// the same grid and driver.
    pub fn shifted(&self, origin: &[f64]) -> SdePath {
        assert_eq!(origin.len(), self.dim);
        let mut states = self.states.clone();
        for node in 0..self.grid.n_nodes() {
            for j in 0..self.dim {
                states[node * self.dim + j] -= origin[j];
            }
        }
        SdePath {
            grid: self.grid,
            dim: self.dim,
            states,
            driver: self.driver.clone(),
        }
    }

    /// Largest Euclidean distance of any node state from `center`.
    pub fn sup_distance(&self, center: &[f64]) -> f64 {
        let mut sup: f64 = 0.0;
        for node in 0..self.grid.n_nodes() {
            let s = self.state(node);
            let d2: f64 = s.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            sup = sup.max(d2);
        }
        sup.sqrt()
    }
}

/// `X_{i+1} = X_i + f(X_i) dt + eps * sigma(X_i) dB_i` along the driver grid.
pub fn euler_maruyama(
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    x0: &[f64],
    driver: &BrownianPath,
) -> Result<SdePath, SimError> {
    let n = f.dim();
    let k = sigma.cols();
    if sigma.rows() != n || x0.len() != n {
        return Err(SimError::DimensionMismatch(format!(
            "drift dim {n}, diffusion {}x{}, x0 len {}",
            sigma.rows(),
            sigma.cols(),
            x0.len()
        )));
    }
    if driver.k() != k {
        return Err(SimError::DimensionMismatch(format!(
            "driver dimension {} but diffusion has {} columns",
            driver.k(),
            k
        )));
    }

    let grid = *driver.grid();
    let dt = grid.dt();
    let n_steps = grid.n_steps();

    if !f.domain().contains(x0) {
        return Err(SimError::DomainEscape { node: 0 });
    }

    let mut states = Vec::with_capacity((n_steps + 1) * n);
    states.extend_from_slice(x0);

    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut fx = vec![0.0; n];
    let mut sx = vec![0.0; n * k];

    for step in 0..n_steps {
        f.eval(&x, &mut fx);
        sigma.eval(&x, &mut sx);
        let db = driver.increment(step);
        for r in 0..n {
            let mut noise = 0.0;
            let row = &sx[r * k..(r + 1) * k];
            for c in 0..k {
                noise += row[c] * db[c];
            }
            next[r] = x[r] + fx[r] * dt + eps * noise;
        }
        let node = step + 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { node });
        }
        if !f.domain().contains(&next) {
            return Err(SimError::DomainEscape { node });
        }
        states.extend_from_slice(&next);
        x.copy_from_slice(&next);
    }

    Ok(SdePath {
        grid,
        dim: n,
        states,
        driver: driver.clone(),
    })
}

/// A batch of paths sharing one grid, with distinct driver substreams.
#[derive(Debug, Clone)]
pub struct Ensemble {
    grid: TimeGrid,
    dim: usize,
    base_seed: u64,
    paths: Vec<SdePath>,
}

impl Ensemble {
    pub fn from_paths(base_seed: u64, paths: Vec<SdePath>) -> Result<Self, EnsembleError> {
        let first = paths.first().ok_or(EnsembleError::Empty)?;
        let grid = *first.grid();
        let dim = first.dim();
        Ok(Self {
            grid,
            dim,
            base_seed,
            paths,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &SdePath {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[SdePath] {
        &self.paths
    }
}

/// Simulate `m` independent paths. Paths are computed in parallel but the
/// result is bit-identical to sequential execution: every path depends only
/// on its own `(base_seed, path_index)` substream and results are collected
/// in path-index order.
pub fn simulate_ensemble(
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    x0: &[f64],
    grid: TimeGrid,
    m: usize,
    base_seed: u64,
) -> Result<Ensemble, EnsembleError> {
    if m == 0 {
        return Err(EnsembleError::Empty);
    }
    let results: Vec<Result<SdePath, SimError>> = (0..m as u64)
        .into_par_iter()
        .map(|path_index| {
            let driver = sample_brownian(grid, sigma.cols(), base_seed, path_index);
            euler_maruyama(f, sigma, eps, x0, &driver)
        })
        .collect();
    let mut paths = Vec::with_capacity(m);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(p),
            Err(source) => {
                return Err(EnsembleError::Path {
                    path_index: i as u64,
                    source,
                })
            }
        }
    }
    Ensemble::from_paths(base_seed, paths)
}
