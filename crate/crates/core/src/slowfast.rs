//! Two-timescale systems: joint fast/slow simulation, slow-manifold
//! tracing with stability data, sample-path concentration statistics, and
//! the Lyapunov-equation non-degeneracy check.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::field::{DiffusionField, VectorField};
use crate::grid::TimeGrid;
use crate::linalg::{self, LinAlgError};
use crate::linearize::{find_fixed_point_with, LinearizeError, NewtonOpts};
use crate::mc::{linear_fit, wilson_interval, LinearFit};
use crate::sde::{simulate_ensemble, Ensemble, EnsembleError};

type BlockFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Error)]
pub enum SlowFastError {
    #[error("dt = {dt:.3e} exceeds the explicit stability bound {stability_dt:.3e}")]
    StiffnessViolation { dt: f64, stability_dt: f64 },
    #[error("continuation broke at sample {at_index}: {source}")]
    ContinuationBreak {
        at_index: usize,
        partial: Box<SlowManifold>,
        source: LinearizeError,
    },
    #[error("eigenvalue computation failed while tracing: {0}")]
    Eigen(#[from] LinAlgError),
    #[error("Lyapunov solve failed (fast spectrum touches the imaginary axis)")]
    LyapunovSolveFailure,
    #[error("fewer than 2 usable exit fractions; widen h range or raise sigma")]
    InsufficientExits,
    #[error(transparent)]
    Simulation(#[from] EnsembleError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// The two-block system
/// `dx = (1/eps) f(x,y) dt + (sigma/sqrt(eps)) F(x,y) dB`,
/// `dy = g(x,y) dt + rho sigma G(x,y) dB`,
/// driven by one `k`-dimensional Brownian motion.
#[derive(Clone)]
pub struct SlowFastSystem {
    n: usize,
    m: usize,
    k: usize,
    f: BlockFn,
    g: BlockFn,
    f_noise: BlockFn, // n x k, row-major
    g_noise: BlockFn, // m x k, row-major
    pub eps: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl SlowFastSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new<Ff, Gf, FNoise, GNoise>(
        n: usize,
        m: usize,
        k: usize,
        f: Ff,
        g: Gf,
        f_noise: FNoise,
        g_noise: GNoise,
        eps: f64,
        sigma: f64,
        rho: f64,
    ) -> Self
    where
        Ff: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        Gf: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        FNoise: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        GNoise: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(n >= 1 && m >= 1 && k >= 1);
        assert!(eps > 0.0 && sigma >= 0.0);
        Self {
            n,
            m,
            k,
            f: Arc::new(f),
            g: Arc::new(g),
            f_noise: Arc::new(f_noise),
            g_noise: Arc::new(g_noise),
            eps,
            sigma,
            rho,
        }
    }

    pub fn fast_dim(&self) -> usize {
        self.n
    }

    pub fn slow_dim(&self) -> usize {
        self.m
    }

    pub fn driver_dim(&self) -> usize {
        self.k
    }

    pub fn eval_fast_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }

    /// Unscaled fast drift frozen at `y`, as a field over `x` alone.
    pub fn frozen_fast_field(&self, y: &[f64]) -> VectorField {
        let f = self.f.clone();
        let y = y.to_vec();
        VectorField::new(self.n, move |x, out| f(x, &y, out))
    }

    /// `F(x, y)` as a matrix, unscaled.
    pub fn fast_noise_matrix(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.n * self.k];
        (self.f_noise)(x, y, &mut buf);
        DMatrix::from_row_slice(self.n, self.k, &buf)
    }

    /// Fold the timescales into plain drift/diffusion fields over the joint
    /// state `(x, y)`, suitable for the generic integrator with `eps = 1`.
    pub fn joint_fields(&self) -> (VectorField, DiffusionField) {
        let n = self.n;
        let m = self.m;
        let k = self.k;
        let inv_eps = 1.0 / self.eps;
        let fast_noise_scale = self.sigma / self.eps.sqrt();
        let slow_noise_scale = self.rho * self.sigma;

        let f = self.f.clone();
        let g = self.g.clone();
        let drift = VectorField::new(n + m, move |xy, out| {
            let (x, y) = xy.split_at(n);
            let (of, og) = out.split_at_mut(n);
            f(x, y, of);
            g(x, y, og);
            for v in of.iter_mut() {
                *v *= inv_eps;
            }
        });

        let f_noise = self.f_noise.clone();
        let g_noise = self.g_noise.clone();
        let diffusion = DiffusionField::new(n + m, k, move |xy, out| {
            let (x, y) = xy.split_at(n);
            let (top, bottom) = out.split_at_mut(n * k);
            f_noise(x, y, top);
            g_noise(x, y, bottom);
            for v in top.iter_mut() {
                *v *= fast_noise_scale;
            }
            for v in bottom.iter_mut() {
                *v *= slow_noise_scale;
            }
        });

        (drift, diffusion)
    }
}

impl std::fmt::Debug for SlowFastSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlowFastSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("k", &self.k)
            .field("eps", &self.eps)
            .field("sigma", &self.sigma)
            .field("rho", &self.rho)
            .finish()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SlowFastOpts {
    /// `dt <= stability_factor * eps / |A*|` guard for the explicit scheme.
    pub stability_factor: f64,
    /// Override for the fast Jacobian magnitude; estimated at the initial
    /// point when absent.
    pub jac_bound: Option<f64>,
}

impl Default for SlowFastOpts {
    fn default() -> Self {
        Self {
            stability_factor: 0.1,
            jac_bound: None,
        }
    }
}

/// Joint Euler-Maruyama run of the two-timescale system.
pub fn simulate_slowfast(
    sys: &SlowFastSystem,
    x0: &[f64],
    y0: &[f64],
    grid: TimeGrid,
    m: usize,
    base_seed: u64,
    opts: SlowFastOpts,
) -> Result<Ensemble, SlowFastError> {
    if x0.len() != sys.n || y0.len() != sys.m {
        return Err(SlowFastError::DimensionMismatch(format!(
            "x0 len {} (need {}), y0 len {} (need {})",
            x0.len(),
            sys.n,
            y0.len(),
            sys.m
        )));
    }
    let jac_bound = match opts.jac_bound {
        Some(b) => b,
        None => {
            let frozen = sys.frozen_fast_field(y0);
            linalg::spectral_radius(&frozen.fd_jacobian(x0))?.max(f64::MIN_POSITIVE)
        }
    };
    let stability_dt = opts.stability_factor * sys.eps / jac_bound;
    if grid.dt() > stability_dt {
        return Err(SlowFastError::StiffnessViolation {
            dt: grid.dt(),
            stability_dt,
        });
    }
    let (drift, diffusion) = sys.joint_fields();
    let mut init = Vec::with_capacity(sys.n + sys.m);
    init.extend_from_slice(x0);
    init.extend_from_slice(y0);
    Ok(simulate_ensemble(
        &drift, &diffusion, 1.0, &init, grid, m, base_seed,
    )?)
}

/// Traced slow manifold `x = x*(y)` over an ordered sample of `y` values,
/// with the frozen-`y` fast Jacobian and its spectral abscissa per sample.
#[derive(Debug, Clone)]
pub struct SlowManifold {
    pub ys: Vec<Vec<f64>>,
    pub x_star: Vec<Vec<f64>>,
    pub a_star: Vec<DMatrix<f64>>,
    pub max_real_part: Vec<f64>,
    pub residual_norm: Vec<f64>,
    /// First sample index where the leading real part crossed zero or came
    /// within the trace tolerance of it.
    pub bifurcation_at: Option<usize>,
}

impl SlowManifold {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// `x*(y)` by piecewise-linear interpolation along the traced samples
    /// (scalar `y` only; higher slow dimensions fall back to the nearest
    /// sample). Queries beyond the traced range clamp to the end samples.
    pub fn x_star_at(&self, y: &[f64]) -> Vec<f64> {
        assert!(!self.is_empty());
        let m = self.ys[0].len();
        assert_eq!(y.len(), m);
        if m == 1 && self.len() >= 2 {
            let q = y[0];
            let ascending = self.ys[0][0] <= self.ys[self.len() - 1][0];
            let before_start = if ascending {
                q <= self.ys[0][0]
            } else {
                q >= self.ys[0][0]
            };
            if before_start {
                return self.x_star[0].clone();
            }
            for w in 0..self.len() - 1 {
                let (a, b) = (self.ys[w][0], self.ys[w + 1][0]);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if q >= lo && q <= hi {
                    let denom = b - a;
                    let t = if denom == 0.0 {
                        0.0
                    } else {
                        ((q - a) / denom).clamp(0.0, 1.0)
                    };
                    return self.x_star[w]
                        .iter()
                        .zip(&self.x_star[w + 1])
                        .map(|(u, v)| u + t * (v - u))
                        .collect();
                }
            }
            return self.x_star[self.len() - 1].clone();
        }
        // Nearest traced sample.
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, ys) in self.ys.iter().enumerate() {
            let d: f64 = ys.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.x_star[best].clone()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOpts {
    pub tol: f64,
    pub max_iter: usize,
    /// Leading real parts within this band of zero raise the bifurcation
    /// flag even without a sign change between samples.
    pub zero_tol: f64,
}

impl Default for TraceOpts {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 60,
            zero_tol: 1e-4,
        }
    }
}

/// Continuation trace of `f(x, y) = 0` in `x`, warm-started sample to sample.
pub fn trace_slow_manifold(
    sys: &SlowFastSystem,
    y_grid: &[Vec<f64>],
    x_init: &[f64],
    opts: TraceOpts,
) -> Result<SlowManifold, SlowFastError> {
    assert!(!y_grid.is_empty());
    let mut manifold = SlowManifold {
        ys: Vec::with_capacity(y_grid.len()),
        x_star: Vec::with_capacity(y_grid.len()),
        a_star: Vec::with_capacity(y_grid.len()),
        max_real_part: Vec::with_capacity(y_grid.len()),
        residual_norm: Vec::with_capacity(y_grid.len()),
        bifurcation_at: None,
    };
    let mut warm = x_init.to_vec();
    let newton = NewtonOpts {
        tol: opts.tol,
        max_iter: opts.max_iter,
        ..NewtonOpts::default()
    };
    for (i, y) in y_grid.iter().enumerate() {
        let frozen = sys.frozen_fast_field(y);
        let fp = match find_fixed_point_with(&frozen, &warm, newton) {
            Ok(fp) => fp,
            Err(source) => {
                return Err(SlowFastError::ContinuationBreak {
                    at_index: i,
                    partial: Box::new(manifold),
                    source,
                })
            }
        };
        let max_re = fp
            .eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if manifold.bifurcation_at.is_none() {
            let crossed = manifold
                .max_real_part
                .last()
                .is_some_and(|prev| prev.signum() != max_re.signum());
            if crossed || max_re.abs() <= opts.zero_tol {
                manifold.bifurcation_at = Some(i);
            }
        }
        warm.copy_from_slice(&fp.location);
        manifold.ys.push(y.clone());
        manifold.x_star.push(fp.location);
        manifold.a_star.push(fp.jacobian);
        manifold.max_real_part.push(max_re);
        manifold.residual_norm.push(fp.residual_norm);
    }
    Ok(manifold)
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub uniformly_stable: bool,
    pub margin: f64,
    /// Samples whose leading real part sits above `-margin`.
    pub offenders: Vec<(usize, f64)>,
}

/// Uniform asymptotic stability: every traced sample needs its leading real
/// part at or below `-margin`.
pub fn check_uniform_stability(manifold: &SlowManifold, margin: f64) -> StabilityReport {
    let offenders: Vec<(usize, f64)> = manifold
        .max_real_part
        .iter()
        .enumerate()
        .filter(|(_, re)| **re > -margin)
        .map(|(i, re)| (i, *re))
        .collect();
    StabilityReport {
        uniformly_stable: offenders.is_empty(),
        margin,
        offenders,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub h_values: Vec<f64>,
    pub exit_fractions: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Fractions inside the fit window `(0.001, 0.5)`.
    pub usable: Vec<bool>,
    pub fit: Option<LinearFit>,
    pub sigma: f64,
    pub m: usize,
    pub burn_in: f64,
}

/// Per-path sup deviation from the manifold after burn-in, thresholded over
/// `h_values`, with a regression of `-log(exit fraction)` on `h^2/sigma^2`.
pub fn concentration_statistics(
    sys: &SlowFastSystem,
    ensemble: &Ensemble,
    manifold: &SlowManifold,
    h_values: &[f64],
    burn_in: f64,
) -> Result<ConcentrationReport, SlowFastError> {
    let n = sys.n;
    let m_dim = sys.m;
    if ensemble.dim() != n + m_dim {
        return Err(SlowFastError::DimensionMismatch(format!(
            "ensemble dimension {} but system is {}+{}",
            ensemble.dim(),
            n,
            m_dim
        )));
    }
    let grid = ensemble.grid();
    let first_node = (0..grid.n_nodes())
        .find(|i| grid.node(*i) >= burn_in - 1e-12)
        .unwrap_or(grid.n_steps());

    let sups: Vec<f64> = ensemble
        .paths()
        .iter()
        .map(|path| {
            let mut sup: f64 = 0.0;
            for node in first_node..grid.n_nodes() {
                let state = path.state(node);
                let (x, y) = state.split_at(n);
                let xs = manifold.x_star_at(y);
                let d2: f64 = x.iter().zip(&xs).map(|(a, b)| (a - b) * (a - b)).sum();
                sup = sup.max(d2);
            }
            sup.sqrt()
        })
        .collect();

    let m = sups.len();
    let mut exit_fractions = Vec::with_capacity(h_values.len());
    let mut ci_low = Vec::with_capacity(h_values.len());
    let mut ci_high = Vec::with_capacity(h_values.len());
    let mut usable = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let exits = sups.iter().filter(|s| **s > h).count();
        let frac = exits as f64 / m as f64;
        let (lo, hi) = wilson_interval(exits, m, 1.96);
        exit_fractions.push(frac);
        ci_low.push(lo);
        ci_high.push(hi);
        usable.push(frac > 0.001 && frac < 0.5);
    }

    let fit = concentration_fit_points(sys.sigma, h_values, &exit_fractions, &usable)
        .and_then(|(x, y)| linear_fit(&x, &y));

    Ok(ConcentrationReport {
        h_values: h_values.to_vec(),
        exit_fractions,
        ci_low,
        ci_high,
        usable,
        fit,
        sigma: sys.sigma,
        m,
        burn_in,
    })
}

fn concentration_fit_points(
    sigma: f64,
    h_values: &[f64],
    fractions: &[f64],
    usable: &[bool],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..h_values.len() {
        if usable[i] {
            xs.push(h_values[i] * h_values[i] / (sigma * sigma));
            ys.push(-fractions[i].ln());
        }
    }
    if xs.len() >= 2 {
        Some((xs, ys))
    } else {
        None
    }
}

/// Fit of the report, or `InsufficientExits` when under 2 usable fractions.
pub fn concentration_fit(report: &ConcentrationReport) -> Result<LinearFit, SlowFastError> {
    report.fit.ok_or(SlowFastError::InsufficientExits)
}

/// One regression over the usable points of several reports on the shared
/// `h^2/sigma^2` axis.
pub fn pooled_concentration_fit(
    reports: &[&ConcentrationReport],
) -> Result<LinearFit, SlowFastError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rep in reports {
        if let Some((mut x, mut y)) =
            concentration_fit_points(rep.sigma, &rep.h_values, &rep.exit_fractions, &rep.usable)
        {
            xs.append(&mut x);
            ys.append(&mut y);
        }
    }
    if xs.len() < 2 {
        return Err(SlowFastError::InsufficientExits);
    }
    linear_fit(&xs, &ys).ok_or(SlowFastError::InsufficientExits)
}

#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyRow {
    pub norm_xbar: f64,
    pub norm_xbar_inv: f64,
    pub degenerate: bool,
}

/// Stationary covariance of the linearized frozen-`y` fast process:
/// solve `A* Xbar + Xbar A*^T + F F^T = 0` per sample and report the
/// operator norms of `Xbar` and its inverse. (The timescale cancels: drift
/// `A*/eps` and squared noise `F F^T / eps` carry the same factor.)
/// Samples whose norms exceed `bound` are flagged degenerate.
pub fn nondegeneracy_check(
    manifold: &SlowManifold,
    f_at_manifold: &[DMatrix<f64>],
    bound: f64,
) -> Result<Vec<NondegeneracyRow>, SlowFastError> {
    if f_at_manifold.len() != manifold.len() {
        return Err(SlowFastError::DimensionMismatch(format!(
            "{} noise matrices for {} manifold samples",
            f_at_manifold.len(),
            manifold.len()
        )));
    }
    let mut rows = Vec::with_capacity(manifold.len());
    for (a, f) in manifold.a_star.iter().zip(f_at_manifold) {
        let q = f * f.transpose();
        let xbar =
            linalg::solve_lyapunov(a, &q).map_err(|_| SlowFastError::LyapunovSolveFailure)?;
        let sv = xbar.clone().svd(false, false).singular_values;
        let norm = sv.max();
        let smin = sv.min();
        let norm_inv = if smin <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / smin
        };
        rows.push(NondegeneracyRow {
            norm_xbar: norm,
            norm_xbar_inv: norm_inv,
            degenerate: !(norm <= bound && norm_inv <= bound),
        });
    }
    Ok(rows)
}

/// `F(x*(y), y)` at every traced sample.
pub fn fast_noise_at_manifold(sys: &SlowFastSystem, manifold: &SlowManifold) -> Vec<DMatrix<f64>> {
    manifold
        .ys
        .iter()
        .zip(&manifold.x_star)
        .map(|(y, x)| sys.fast_noise_matrix(x, y))
        .collect()
}

/// The 1D-1D linear benchmark: `f = -(x - y)`, `F = 1`, frozen slow block
/// (`g = 0`, `G = 1` scaled by `rho`).
pub fn linear_relaxation_system(eps: f64, sigma: f64, rho: f64) -> SlowFastSystem {
    SlowFastSystem::new(
        1,
        1,
        1,
        |x, y, out| out[0] = -(x[0] - y[0]),
        |_x, _y, out| out[0] = 0.0,
        |_x, _y, out| out[0] = 1.0,
        |_x, _y, out| out[0] = 1.0,
        eps,
        sigma,
        rho,
    )
}
