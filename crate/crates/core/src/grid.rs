//! Uniform time grids on a finite horizon.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("time grid requires t_end > t0, got t0 = {t0}, t_end = {t_end}")]
    EmptySpan { t0: f64, t_end: f64 },
    #[error("time grid requires at least one step")]
    NoSteps,
    #[error("time grid endpoints must be finite")]
    NonFinite,
    #[error("grid with {n_steps} steps cannot be coarsened by factor {factor}")]
    BadCoarsening { n_steps: usize, factor: usize },
}

/// Uniform grid `t0 + i*dt`, `0 <= i <= n_steps`, with `dt = (t_end - t0)/n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self, GridError> {
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(GridError::NonFinite);
        }
        if t_end <= t0 {
            return Err(GridError::EmptySpan { t0, t_end });
        }
        if n_steps == 0 {
            return Err(GridError::NoSteps);
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Grid on `[0, t_end]`.
    pub fn to_horizon(t_end: f64, n_steps: usize) -> Result<Self, GridError> {
        Self::new(0.0, t_end, n_steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.span() / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        self.t0 + i as f64 * self.dt()
    }

    /// Index of the grid node closest to `t` (clamped to the grid).
    pub fn nearest_node(&self, t: f64) -> usize {
        let raw = (t - self.t0) / self.dt();
        let idx = raw.round();
        if idx <= 0.0 {
            0
        } else if idx >= self.n_steps as f64 {
            self.n_steps
        } else {
            idx as usize
        }
    }

    /// Same span, `factor` times more steps.
    pub fn refine(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        Self {
            t0: self.t0,
            t_end: self.t_end,
            n_steps: self.n_steps * factor,
        }
    }

    /// Same span, `factor` times fewer steps. Fails unless `factor` divides `n_steps`.
    pub fn coarsen(&self, factor: usize) -> Result<Self, GridError> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(GridError::BadCoarsening {
                n_steps: self.n_steps,
                factor,
            });
        }
        Ok(Self {
            t0: self.t0,
            t_end: self.t_end,
            n_steps: self.n_steps / factor,
        })
    }
}
