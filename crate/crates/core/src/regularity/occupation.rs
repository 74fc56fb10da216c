//! Occupation-density probe: how much mass the time-`t` law of the flow
//! leaves in small boxes, averaged and maximized over a grid of starts.

use rayon::prelude::*;
use serde::Serialize;

use super::RegularityError;
use crate::brownian::sample_brownian;
use crate::field::{DiffusionField, VectorField};
use crate::grid::TimeGrid;
use crate::sde::euler_maruyama;

/// Equal-cell partition of an observation box, half-open binning per axis.
#[derive(Debug, Clone, Serialize)]
pub struct BoxPartition {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
}

impl BoxPartition {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, res: Vec<usize>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert_eq!(lo.len(), res.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        assert!(res.iter().all(|r| *r >= 1));
        Self { lo, hi, res }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_cells(&self) -> usize {
        self.res.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim())
            .map(|a| (self.hi[a] - self.lo[a]) / self.res[a] as f64)
            .product()
    }

    /// Flat cell index of `x`, `None` outside the box.
    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for a in (0..self.dim()).rev() {
            let w = (self.hi[a] - self.lo[a]) / self.res[a] as f64;
            let u = (x[a] - self.lo[a]) / w;
            if u < 0.0 || x[a] >= self.hi[a] {
                return None;
            }
            let i = (u.floor() as usize).min(self.res[a] - 1);
            flat = flat * self.res[a] + i;
        }
        Some(flat)
    }

    /// Same box with `factor` times more cells per axis.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            res: self.res.iter().map(|r| r * factor).collect(),
        }
    }
}

/// Per-partition occupation statistics.
///
/// Two densities per cell: `start_integral` is the quadrature over starts
/// `sum_s dx P_s(A) / |A|` (the empirical occupation constant), and
/// `max_transition` is `max_s P_s(A) / |A|`, the worst single-start
/// transition density. A Dirac-like flow blows the latter up under
/// partition refinement; an elliptic one plateaus at the true density sup.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationTable {
    pub partition: BoxPartition,
    pub start_integral: Vec<f64>,
    pub max_transition: Vec<f64>,
    pub max_transition_se: Vec<f64>,
    /// `max_transition` maximized over cells, with the standard error of the
    /// maximizing (start, cell) estimate.
    pub sup_density: f64,
    pub sup_density_se: f64,
    pub sup_cell: usize,
    /// `start_integral` maximized over cells.
    pub fundamental_c: f64,
    pub n_starts: usize,
    pub m_per_start: usize,
}

/// Per-start arrays of terminal states plus the start quadrature weight.
type StartTerminals = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

/// Terminal states of `m_per_start` paths from every start on a midpoint
/// grid over the start box.
#[allow(clippy::too_many_arguments)]
fn gather_terminals(
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    grid: TimeGrid,
    start_lo: &[f64],
    start_hi: &[f64],
    start_res: &[usize],
    m_per_start: usize,
    base_seed: u64,
) -> Result<StartTerminals, RegularityError> {
    let dim = f.dim();
    assert_eq!(start_lo.len(), dim);
    assert_eq!(start_hi.len(), dim);
    assert_eq!(start_res.len(), dim);
    let n_starts: usize = start_res.iter().product();
    let dx: f64 = (0..dim)
        .map(|a| (start_hi[a] - start_lo[a]) / start_res[a] as f64)
        .product();

    let mut starts = Vec::with_capacity(n_starts);
    for flat in 0..n_starts {
        let mut rem = flat;
        let mut x = vec![0.0; dim];
        for a in 0..dim {
            let i = rem % start_res[a];
            rem /= start_res[a];
            let w = (start_hi[a] - start_lo[a]) / start_res[a] as f64;
            x[a] = start_lo[a] + (i as f64 + 0.5) * w;
        }
        starts.push(x);
    }

    let terminals: Vec<Vec<f64>> = starts
        .par_iter()
        .enumerate()
        .map(|(s_idx, start)| {
            let mut block = Vec::with_capacity(m_per_start * dim);
            for j in 0..m_per_start {
                let path_index = (s_idx * m_per_start + j) as u64;
                let driver = sample_brownian(grid, sigma.cols(), base_seed, path_index);
                let path = euler_maruyama(f, sigma, eps, start, &driver)
                    .map_err(|source| RegularityError::Sim { path_index, source })?;
                block.extend_from_slice(path.terminal());
            }
            Ok(block)
        })
        .collect::<Result<_, RegularityError>>()?;

    Ok((starts, terminals, dx))
}

fn bin_table(
    terminals: &[Vec<f64>],
    dim: usize,
    m_per_start: usize,
    dx: f64,
    partition: &BoxPartition,
) -> OccupationTable {
    let n_cells = partition.n_cells();
    let n_starts = terminals.len();
    let vol = partition.cell_volume();
    let m = m_per_start as f64;

    let mut start_integral = vec![0.0; n_cells];
    let mut max_transition = vec![0.0; n_cells];
    let mut max_transition_se = vec![0.0; n_cells];

    let mut counts = vec![0u32; n_cells];
    for block in terminals {
        counts.iter_mut().for_each(|c| *c = 0);
        for chunk in block.chunks_exact(dim) {
            if let Some(cell) = partition.cell_index(chunk) {
                counts[cell] += 1;
            }
        }
        for (cell, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let p = count as f64 / m;
            let density = p / vol;
            start_integral[cell] += dx * density;
            if density > max_transition[cell] {
                max_transition[cell] = density;
                max_transition_se[cell] = (p * (1.0 - p) / m).sqrt() / vol;
            }
        }
    }

    let mut sup_density = 0.0;
    let mut sup_density_se = 0.0;
    let mut sup_cell = 0;
    for cell in 0..n_cells {
        if max_transition[cell] > sup_density {
            sup_density = max_transition[cell];
            sup_density_se = max_transition_se[cell];
            sup_cell = cell;
        }
    }
    let fundamental_c = start_integral.iter().copied().fold(0.0f64, f64::max);

    OccupationTable {
        partition: partition.clone(),
        start_integral,
        max_transition,
        max_transition_se,
        sup_density,
        sup_density_se,
        sup_cell,
        fundamental_c,
        n_starts,
        m_per_start,
    }
}

/// Estimate occupation densities for one partition.
#[allow(clippy::too_many_arguments)]
pub fn occupation_density_estimate(
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    grid: TimeGrid,
    start_lo: &[f64],
    start_hi: &[f64],
    start_res: &[usize],
    partition: &BoxPartition,
    m_per_start: usize,
    base_seed: u64,
) -> Result<OccupationTable, RegularityError> {
    let (_, terminals, dx) = gather_terminals(
        f,
        sigma,
        eps,
        grid,
        start_lo,
        start_hi,
        start_res,
        m_per_start,
        base_seed,
    )?;
    Ok(bin_table(&terminals, f.dim(), m_per_start, dx, partition))
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupationProbe {
    pub coarse: OccupationTable,
    pub fine: OccupationTable,
    /// `sup_density(fine) / sup_density(coarse)`.
    pub growth_ratio: f64,
    /// Growth at or beyond 2x under one refinement: the occupation measure
    /// behaves like a point mass at the sampled scale.
    pub condition_failed: bool,
}

/// Run the estimator at `partition` and its 2x refinement on the *same*
/// simulated terminals, so the ratio carries binning information only.
#[allow(clippy::too_many_arguments)]
pub fn occupation_refinement_probe(
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    grid: TimeGrid,
    start_lo: &[f64],
    start_hi: &[f64],
    start_res: &[usize],
    partition: &BoxPartition,
    m_per_start: usize,
    base_seed: u64,
) -> Result<OccupationProbe, RegularityError> {
    let (_, terminals, dx) = gather_terminals(
        f,
        sigma,
        eps,
        grid,
        start_lo,
        start_hi,
        start_res,
        m_per_start,
        base_seed,
    )?;
    let dim = f.dim();
    let coarse = bin_table(&terminals, dim, m_per_start, dx, partition);
    let fine = bin_table(&terminals, dim, m_per_start, dx, &partition.refine(2));
    let growth_ratio = fine.sup_density / coarse.sup_density;
    Ok(OccupationProbe {
        coarse,
        fine,
        growth_ratio,
        condition_failed: growth_ratio >= 2.0 - 1e-9,
    })
}
