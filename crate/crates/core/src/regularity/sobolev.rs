//! Discrete fractional Sobolev (Gagliardo) norms of grid paths and the
//! Brownian refinement dichotomy.

use serde::Serialize;

use super::RegularityError;
use crate::brownian::sample_brownian;
use crate::grid::TimeGrid;

fn abs_pow(d: f64, p: f64) -> f64 {
    if p == 4.0 {
        let d2 = d * d;
        d2 * d2
    } else if p == 2.0 {
        d * d
    } else {
        d.abs().powf(p)
    }
}

/// `W^{s,p}` energy (the p-th power of the norm): the `L^p` term plus the
/// double Riemann sum over distinct node pairs
/// `|M_i - M_j|^p / |t_i - t_j|^{1+sp} * dt^2`.
///
/// The diagonal `i = j` is excluded (the integrand is singular there); the
/// omitted band contributes `O(dt^{(1-s)p})`.
pub fn fractional_sobolev_energy(values: &[f64], grid: &TimeGrid, s: f64, p: f64) -> f64 {
    let n_nodes = grid.n_nodes();
    assert_eq!(values.len(), n_nodes);
    let dt = grid.dt();
    let dt2 = dt * dt;

    let lp_term: f64 = values.iter().map(|v| abs_pow(*v, p) * dt).sum();

    // Lag-indexed weights: |t_i - t_j| depends only on |i - j|.
    let exponent = 1.0 + s * p;
    let mut double_sum = 0.0;
    for lag in 1..n_nodes {
        let weight = (lag as f64 * dt).powf(-exponent);
        let mut lag_acc = 0.0;
        for i in 0..n_nodes - lag {
            lag_acc += abs_pow(values[i + lag] - values[i], p);
        }
        // Both orderings of the pair.
        double_sum += 2.0 * lag_acc * weight * dt2;
    }
    lp_term + double_sum
}

/// The norm itself: p-th root of the energy. Requires the imbedding regime
/// `1/p < s < 1` with `p >= 1`.
pub fn fractional_sobolev_norm(
    values: &[f64],
    grid: &TimeGrid,
    s: f64,
    p: f64,
) -> Result<f64, RegularityError> {
    if !(s > 0.0 && s < 1.0 && p >= 1.0 && s > 1.0 / p) {
        return Err(RegularityError::InvalidExponents { s, p });
    }
    Ok(fractional_sobolev_energy(values, grid, s, p).powf(1.0 / p))
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolevDichotomyReport {
    pub p: f64,
    pub s_bounded: f64,
    pub s_unbounded: f64,
    pub resolutions: Vec<usize>,
    pub n_paths: usize,
    pub mean_energy_bounded: Vec<f64>,
    pub mean_energy_unbounded: Vec<f64>,
    pub mean_norm_bounded: Vec<f64>,
    pub mean_norm_unbounded: Vec<f64>,
    /// `max/min - 1` of the bounded-side energies across resolutions.
    pub bounded_variation: f64,
    /// `last/first` of the unbounded-side energies across refinements.
    pub unbounded_total_growth: f64,
    pub bounded_ok: bool,
    pub unbounded_ok: bool,
}

/// Mean `W^{s,p}` energies of Brownian path ensembles on `[0, 1]` across a
/// ladder of grid resolutions, for one exponent below and one above the
/// Brownian threshold `s = 1/2`. The bounded side must stay within
/// `bounded_band` relative variation; the unbounded side must grow by at
/// least `growth_min` from the first to the last refinement.
///
/// Resolutions are coupled: each path is drawn once at the finest grid and
/// coarsened onto the others, so per-path Monte Carlo noise cancels in the
/// across-resolution comparison and the refinement effect stands alone.
#[allow(clippy::too_many_arguments)]
pub fn sobolev_dichotomy_study(
    resolutions: &[usize],
    n_paths: usize,
    s_bounded: f64,
    s_unbounded: f64,
    p: f64,
    base_seed: u64,
    bounded_band: f64,
    growth_min: f64,
) -> Result<SobolevDichotomyReport, RegularityError> {
    if resolutions.len() < 2 {
        return Err(RegularityError::InsufficientData(
            "need at least two resolutions".into(),
        ));
    }
    for s in [s_bounded, s_unbounded] {
        if !(s > 0.0 && s < 1.0 && p >= 1.0 && s > 1.0 / p) {
            return Err(RegularityError::InvalidExponents { s, p });
        }
    }
    let finest = *resolutions.iter().max().unwrap();
    if resolutions
        .iter()
        .any(|r| *r == 0 || !finest.is_multiple_of(*r))
    {
        return Err(RegularityError::InsufficientData(
            "every resolution must divide the finest one".into(),
        ));
    }

    let fine_grid = TimeGrid::to_horizon(1.0, finest).unwrap();
    use rayon::prelude::*;
    // rows[path] = per-resolution (bounded, unbounded) energies.
    let rows: Vec<Vec<(f64, f64)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path_index| {
            let fine = sample_brownian(fine_grid, 1, base_seed, path_index);
            resolutions
                .iter()
                .map(|&n_steps| {
                    let b = if n_steps == finest {
                        fine.clone()
                    } else {
                        fine.coarsen(finest / n_steps)
                            .expect("divisibility checked")
                    };
                    let grid = *b.grid();
                    let values = b.values_scalar();
                    let eb = fractional_sobolev_energy(&values, &grid, s_bounded, p);
                    let eu = fractional_sobolev_energy(&values, &grid, s_unbounded, p);
                    (eb, eu)
                })
                .collect()
        })
        .collect();

    let inv = 1.0 / n_paths as f64;
    let mut mean_energy_bounded = Vec::with_capacity(resolutions.len());
    let mut mean_energy_unbounded = Vec::with_capacity(resolutions.len());
    let mut mean_norm_bounded = Vec::with_capacity(resolutions.len());
    let mut mean_norm_unbounded = Vec::with_capacity(resolutions.len());
    for level in 0..resolutions.len() {
        let mut acc_b = 0.0;
        let mut acc_u = 0.0;
        let mut acc_nb = 0.0;
        let mut acc_nu = 0.0;
        for row in &rows {
            let (eb, eu) = row[level];
            acc_b += eb;
            acc_u += eu;
            acc_nb += eb.powf(1.0 / p);
            acc_nu += eu.powf(1.0 / p);
        }
        mean_energy_bounded.push(acc_b * inv);
        mean_energy_unbounded.push(acc_u * inv);
        mean_norm_bounded.push(acc_nb * inv);
        mean_norm_unbounded.push(acc_nu * inv);
    }

    let max_b = mean_energy_bounded.iter().copied().fold(0.0f64, f64::max);
    let min_b = mean_energy_bounded
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let bounded_variation = max_b / min_b - 1.0;
    let unbounded_total_growth =
        mean_energy_unbounded[mean_energy_unbounded.len() - 1] / mean_energy_unbounded[0];

    Ok(SobolevDichotomyReport {
        p,
        s_bounded,
        s_unbounded,
        resolutions: resolutions.to_vec(),
        n_paths,
        mean_energy_bounded,
        mean_energy_unbounded,
        mean_norm_bounded,
        mean_norm_unbounded,
        bounded_variation,
        unbounded_total_growth,
        bounded_ok: bounded_variation <= bounded_band,
        unbounded_ok: unbounded_total_growth >= growth_min,
    })
}
