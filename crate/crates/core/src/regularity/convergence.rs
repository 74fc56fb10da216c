//! Coupled convergence study: simulate the raw system and its mollified
//! versions on common Brownian drivers and track strong and weak distances
//! as the kernel scale shrinks.

use rayon::prelude::*;
use serde::Serialize;

use super::gridfield::{mollify, GridField};
use super::mollifier::Mollifier;
use super::RegularityError;
use crate::brownian::sample_brownian;
use crate::field::{DiffusionField, VectorField};
use crate::grid::TimeGrid;
use crate::mc::{linear_fit, mean_and_se, Observable};
use crate::sde::euler_maruyama;

pub struct ConvergenceSetup<'a> {
    pub f: &'a VectorField,
    pub sigma: &'a DiffusionField,
    pub eps: f64,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub m: usize,
    pub base_seed: u64,
    /// Lattice box on which the coefficients are sampled; must exceed the
    /// simulation range by at least the largest kernel scale.
    pub lattice_lo: Vec<f64>,
    pub lattice_hi: Vec<f64>,
    pub observables: Vec<Observable>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub scales: Vec<f64>,
    /// Mean over paths of `sup_t |X^scale_t - X_t|`, per scale.
    pub strong_distance: Vec<f64>,
    /// `|E phi(X^scale) - E phi(X)|` per observable (rows) and scale (cols).
    pub weak_distance: Vec<Vec<f64>>,
    pub observable_names: Vec<String>,
    pub strong_nonincreasing: bool,
    /// Log-log slope of the weak distance in the scale, per observable.
    pub weak_slopes: Vec<f64>,
    /// `strong[0] / scales[0]`, the coarse-scale Lipschitz-type ratio.
    pub fitted_c: f64,
    pub converged: bool,
}

/// Simulate the raw and mollified systems with common drivers across a
/// strictly decreasing ladder of kernel scales.
pub fn regularization_convergence_study(
    setup: &ConvergenceSetup,
    scales: &[f64],
) -> Result<ConvergenceReport, RegularityError> {
    assert!(!scales.is_empty());
    assert!(
        scales.windows(2).all(|w| w[1] < w[0]) && scales.iter().all(|s| *s > 0.0),
        "scales must be strictly decreasing and positive"
    );
    let n = setup.f.dim();
    let k = setup.sigma.cols();
    let max_scale = scales[0];
    let min_scale = scales[scales.len() - 1];

    // One lattice serves every scale: spacing at min_scale/8 satisfies the
    // kernel resolution precondition with margin.
    let spacing = min_scale / 8.0;
    let nodes: Vec<usize> = (0..n)
        .map(|a| ((setup.lattice_hi[a] - setup.lattice_lo[a]) / spacing).ceil() as usize + 1)
        .collect();
    let f_lattice = GridField::sample(
        n,
        n,
        setup.lattice_lo.clone(),
        setup.lattice_hi.clone(),
        nodes.clone(),
        |x, out| setup.f.eval(x, out),
    );
    let sigma_lattice = GridField::sample(
        n,
        n * k,
        setup.lattice_lo.clone(),
        setup.lattice_hi.clone(),
        nodes,
        |x, out| setup.sigma.eval(x, out),
    );

    // Shared simulation box: the largest scale deflates the lattice box.
    let target_lo: Vec<f64> = setup.lattice_lo.iter().map(|v| v + max_scale).collect();
    let target_hi: Vec<f64> = setup.lattice_hi.iter().map(|v| v - max_scale).collect();

    let raw_f = {
        let f = setup.f.clone();
        VectorField::new(n, move |x, out| f.eval(x, out))
            .with_domain(target_lo.clone(), target_hi.clone())
    };

    let mut mollified: Vec<(VectorField, DiffusionField)> = Vec::with_capacity(scales.len());
    for &scale in scales {
        let kernel = Mollifier::new(n, scale, 64)?;
        let f_m = mollify(&f_lattice, &kernel, &target_lo, &target_hi)?;
        let s_m = mollify(&sigma_lattice, &kernel, &target_lo, &target_hi)?;
        mollified.push((f_m.as_vector_field(), s_m.as_diffusion_field(n, k)));
    }

    let n_obs = setup.observables.len();
    // Per path: sup distances per scale, raw observables, per-scale observables.
    type PathRow = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);
    let rows: Vec<PathRow> = (0..setup.m as u64)
        .into_par_iter()
        .map(|path_index| {
            let driver = sample_brownian(setup.grid, k, setup.base_seed, path_index);
            let raw_path = euler_maruyama(&raw_f, setup.sigma, setup.eps, &setup.x0, &driver)
                .map_err(|source| RegularityError::Sim { path_index, source })?;
            let raw_obs: Vec<f64> = setup
                .observables
                .iter()
                .map(|o| o.eval(&raw_path))
                .collect();
            let mut sups = Vec::with_capacity(scales.len());
            let mut scale_obs = Vec::with_capacity(scales.len());
            for (f_m, s_m) in &mollified {
                let path = euler_maruyama(f_m, s_m, setup.eps, &setup.x0, &driver)
                    .map_err(|source| RegularityError::Sim { path_index, source })?;
                let mut sup: f64 = 0.0;
                for node in 0..setup.grid.n_nodes() {
                    let d2: f64 = path
                        .state(node)
                        .iter()
                        .zip(raw_path.state(node))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    sup = sup.max(d2);
                }
                sups.push(sup.sqrt());
                scale_obs.push(
                    setup
                        .observables
                        .iter()
                        .map(|o| o.eval(&path))
                        .collect::<Vec<f64>>(),
                );
            }
            Ok((sups, raw_obs, scale_obs))
        })
        .collect::<Result<_, RegularityError>>()?;

    let m = rows.len();
    let mut strong_distance = vec![0.0; scales.len()];
    for (sups, _, _) in &rows {
        for (acc, s) in strong_distance.iter_mut().zip(sups) {
            *acc += s;
        }
    }
    for acc in &mut strong_distance {
        *acc /= m as f64;
    }

    let mut weak_distance = vec![vec![0.0; scales.len()]; n_obs];
    for obs_i in 0..n_obs {
        let raw_vals: Vec<f64> = rows.iter().map(|(_, r, _)| r[obs_i]).collect();
        let raw_mean = mean_and_se(&raw_vals).mean;
        for (scale_i, _) in scales.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|(_, _, s)| s[scale_i][obs_i]).collect();
            weak_distance[obs_i][scale_i] = (mean_and_se(&vals).mean - raw_mean).abs();
        }
    }

    let strong_nonincreasing = strong_distance.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let weak_slopes: Vec<f64> = weak_distance
        .iter()
        .map(|per_scale| {
            let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
            let ys: Vec<f64> = per_scale.iter().map(|d| d.max(1e-300).ln()).collect();
            linear_fit(&xs, &ys).map_or(f64::NAN, |fit| fit.slope)
        })
        .collect();
    let fitted_c = strong_distance[0] / scales[0];
    let converged = strong_nonincreasing
        && strong_distance[scales.len() - 1] <= fitted_c * scales[scales.len() - 1];

    Ok(ConvergenceReport {
        scales: scales.to_vec(),
        strong_distance,
        weak_distance,
        observable_names: setup.observables.iter().map(|o| o.name().into()).collect(),
        strong_nonincreasing,
        weak_slopes,
        fitted_c,
        converged,
    })
}

/// The `W^{2,inf}` benchmark drift `f(x) = -x + x|x|/2`: the derivative is
/// Lipschitz, the second derivative bounded with a jump at the origin.
pub fn w2inf_benchmark_drift() -> VectorField {
    VectorField::scalar(|x| -x + 0.5 * x * x.abs())
}
