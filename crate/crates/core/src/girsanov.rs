//! Drift-correction processes, stochastic exponentials, and statistical
//! verification that reweighted nonlinear paths match the linearized law.
//!
//! Sign convention: the correction integrand is `u = -(1/eps) sigma^+ r`,
//! chosen so that under `dQ = E(L)_T dP` the Euler chain of the full system
//! has the law of the Euler chain of `dz = A z dt + eps sigma(x0+z) dW`.
//! With the integrand evaluated along the path and an invertible sigma this
//! identity is exact in discrete time, not just in the `dt -> 0` limit.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::brownian::{derive_seed, sample_brownian, BrownianPath};
use crate::field::{DiffusionField, VectorField};
use crate::grid::TimeGrid;
use crate::linalg::{self, LinAlgError};
use crate::linearize::LinearizedSystem;
use crate::mc::{mean_and_se, Observable};
use crate::sde::{euler_maruyama, Ensemble, SdePath, SimError};

/// Substream roles for the pipeline stages.
const ROLE_NONLINEAR: u64 = 1;
const ROLE_LINEAR: u64 = 2;
const ROLE_CALIB_NONLINEAR: u64 = 3;
const ROLE_CALIB_LINEAR: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GirsanovError {
    #[error("diffusion ill-conditioned at node {node} (condition number {cond:.3e})")]
    IllConditioned { node: usize, cond: f64 },
    #[error("remainder leaves Im(sigma(x0)) at node {node} (residual {residual:.3e})")]
    RangeConditionViolated { node: usize, residual: f64 },
    #[error("weight accumulation became non-finite at node {node}")]
    NonFinite { node: usize },
    #[error("grid mismatch between correction series and driver")]
    GridMismatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invertible mode requires square sigma, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weights collapsed: effective sample size {ess:.2} of {m} paths")]
    DegenerateWeights { ess: f64, m: usize },
    #[error("path {path_index}: {source}")]
    Sim { path_index: u64, source: SimError },
    #[error(transparent)]
    LinAlg(#[from] LinAlgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    /// Solve `sigma(X_i) u = -r/eps` with the square diffusion along the path.
    Invertible,
    /// Decompose the remainder in `Im(sigma(x0))` through the frozen
    /// pseudo-inverse (rank-deficient and non-square full-rank cases).
    RangeProject,
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectionOpts {
    /// Condition-number limit for the path diffusion in `Invertible` mode.
    pub cond_limit: f64,
    /// Absolute floor for a scalar diffusion before it counts as singular.
    pub sigma_floor: f64,
    /// Least-squares residual tolerance for the range condition.
    pub residual_tol: f64,
    /// Freeze the correction to zero once the path leaves this ball around
    /// the fixed point (the stopped exponential stays an exact martingale).
    pub localization_radius: Option<f64>,
    /// Multiplier on the correction integrand; 1 is the faithful weight,
    /// anything else deliberately sabotages it for sensitivity checks.
    pub u_multiplier: f64,
    /// `RangeProject` variant: project with `sigma(X_t)^+` along the path
    /// instead of the frozen `sigma(x0)^+`.
    pub project_along_path: bool,
}

impl Default for CorrectionOpts {
    fn default() -> Self {
        Self {
            cond_limit: 1e8,
            sigma_floor: 1e-12,
            residual_tol: 1e-8,
            localization_radius: None,
            u_multiplier: 1.0,
            project_along_path: false,
        }
    }
}

/// Per-node integrand of the correction martingale `L_t = int u . dB`.
#[derive(Debug, Clone)]
pub struct DriftCorrectionSeries {
    grid: TimeGrid,
    k: usize,
    u: Vec<f64>, // (n_steps + 1) * k, node-major
    stopped_at: Option<usize>,
}

impl DriftCorrectionSeries {
    /// Series from explicit per-node values (`(n_steps + 1) * k` entries).
    pub fn from_values(grid: TimeGrid, k: usize, u: Vec<f64>) -> Result<Self, GirsanovError> {
        if u.len() != grid.n_nodes() * k {
            return Err(GirsanovError::DimensionMismatch(format!(
                "expected {} integrand entries, got {}",
                grid.n_nodes() * k,
                u.len()
            )));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(GirsanovError::NonFinite { node: 0 });
        }
        Ok(Self {
            grid,
            k,
            u,
            stopped_at: None,
        })
    }

    /// Constant integrand at every node.
    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let k = value.len();
        let mut u = Vec::with_capacity(grid.n_nodes() * k);
        for _ in 0..grid.n_nodes() {
            u.extend_from_slice(value);
        }
        Self {
            grid,
            k,
            u,
            stopped_at: None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at_node(&self, node: usize) -> &[f64] {
        &self.u[node * self.k..(node + 1) * self.k]
    }

    /// First node at which localization froze the integrand, if any.
    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }
}

/// Log-density process of the stochastic exponential on the grid.
#[derive(Debug, Clone)]
pub struct GirsanovWeight {
    grid: TimeGrid,
    log_d: Vec<f64>,
    quad_var: Vec<f64>,
    stopped_at: Option<usize>,
}

impl GirsanovWeight {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn log_d(&self, node: usize) -> f64 {
        self.log_d[node]
    }

    /// `D_i = exp(log D_i)`, positive by construction.
    pub fn d(&self, node: usize) -> f64 {
        self.log_d[node].exp()
    }

    pub fn terminal_d(&self) -> f64 {
        self.d(self.grid.n_steps())
    }

    /// Running quadratic variation `int_0^{t_i} |u|^2 ds`.
    pub fn quadratic_variation(&self, node: usize) -> f64 {
        self.quad_var[node]
    }

    pub fn terminal_quadratic_variation(&self) -> f64 {
        self.quad_var[self.grid.n_steps()]
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }
}

/// Basis of `Im(sigma(x0))` with pre-images, from the SVD.
#[derive(Debug, Clone)]
pub struct RangeDecomposition {
    pub sigma0: DMatrix<f64>,
    pub rank: usize,
    pub basis: Vec<Vec<f64>>,
    pub preimages: Vec<Vec<f64>>,
    pub residual_tol: f64,
}

pub fn range_decomposition(
    sigma0: &DMatrix<f64>,
    residual_tol: f64,
) -> Result<RangeDecomposition, GirsanovError> {
    let svd = sigma0.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or(LinAlgError::SvdFailure)?;
    let v_t = svd.v_t.as_ref().ok_or(LinAlgError::SvdFailure)?;
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax.max(1.0);
    let mut basis = Vec::new();
    let mut preimages = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff {
            basis.push(u.column(i).iter().copied().collect());
            preimages.push(v_t.row(i).iter().map(|v| v / s).collect());
        }
    }
    Ok(RangeDecomposition {
        sigma0: sigma0.clone(),
        rank: basis.len(),
        basis,
        preimages,
        residual_tol,
    })
}

/// How the correction integrand is produced at a state.
enum USolver {
    Scalar,
    Square,
    Frozen {
        pinv: DMatrix<f64>,
        sigma0: DMatrix<f64>,
    },
    AlongPath,
}

struct CorrectionEngine<'a> {
    linsys: &'a LinearizedSystem,
    sigma: &'a DiffusionField,
    eps: f64,
    opts: CorrectionOpts,
    solver: USolver,
    n: usize,
    k: usize,
}

impl<'a> CorrectionEngine<'a> {
    fn new(
        linsys: &'a LinearizedSystem,
        sigma: &'a DiffusionField,
        eps: f64,
        mode: CorrectionMode,
        opts: CorrectionOpts,
    ) -> Result<Self, GirsanovError> {
        let n = linsys.dim();
        let k = sigma.cols();
        if sigma.rows() != n {
            return Err(GirsanovError::DimensionMismatch(format!(
                "diffusion has {} rows but system dimension is {n}",
                sigma.rows()
            )));
        }
        let solver = match mode {
            CorrectionMode::Invertible => {
                if !sigma.is_square() {
                    return Err(GirsanovError::NotSquare {
                        rows: sigma.rows(),
                        cols: sigma.cols(),
                    });
                }
                if n == 1 {
                    USolver::Scalar
                } else {
                    USolver::Square
                }
            }
            CorrectionMode::RangeProject => {
                if opts.project_along_path {
                    USolver::AlongPath
                } else {
                    let sigma0 = sigma.matrix_at(linsys.origin());
                    let pinv = linalg::pseudo_inverse(&sigma0, 1e-12)?;
                    USolver::Frozen { pinv, sigma0 }
                }
            }
        };
        Ok(Self {
            linsys,
            sigma,
            eps,
            opts,
            solver,
            n,
            k,
        })
    }

    /// Correction integrand at state `x` (node index only for error context).
    fn u_at(
        &self,
        x: &[f64],
        node: usize,
        r_buf: &mut [f64],
        out: &mut [f64],
    ) -> Result<(), GirsanovError> {
        self.linsys.remainder(x, r_buf);
        let scale = -self.opts.u_multiplier / self.eps;
        match &self.solver {
            USolver::Scalar => {
                let mut s = [0.0];
                self.sigma.eval(x, &mut s);
                if s[0].abs() <= self.opts.sigma_floor {
                    return Err(GirsanovError::IllConditioned {
                        node,
                        cond: f64::INFINITY,
                    });
                }
                out[0] = scale * r_buf[0] / s[0];
            }
            USolver::Square => {
                let s = self.sigma.matrix_at(x);
                let svd = s.svd(true, true);
                let smax = svd.singular_values.max();
                let smin = svd.singular_values.min();
                let cond = if smin == 0.0 {
                    f64::INFINITY
                } else {
                    smax / smin
                };
                if cond > self.opts.cond_limit {
                    return Err(GirsanovError::IllConditioned { node, cond });
                }
                let r = nalgebra::DVector::from_column_slice(r_buf);
                let sol = svd.solve(&r, 0.0).map_err(|_| LinAlgError::SvdFailure)?;
                for (o, v) in out.iter_mut().zip(sol.iter()) {
                    *o = scale * v;
                }
            }
            USolver::Frozen { pinv, sigma0 } => {
                self.project(pinv, sigma0, r_buf, scale, node, out)?;
            }
            USolver::AlongPath => {
                let s = self.sigma.matrix_at(x);
                let pinv = linalg::pseudo_inverse(&s, 1e-12)?;
                self.project(&pinv, &s, r_buf, scale, node, out)?;
            }
        }
        Ok(())
    }

    fn project(
        &self,
        pinv: &DMatrix<f64>,
        sigma_mat: &DMatrix<f64>,
        r: &[f64],
        scale: f64,
        node: usize,
        out: &mut [f64],
    ) -> Result<(), GirsanovError> {
        // coeffs = sigma^+ r; range residual = |sigma sigma^+ r - r|.
        let rv = nalgebra::DVector::from_column_slice(r);
        let coeffs = pinv * &rv;
        let back = sigma_mat * &coeffs;
        let residual = (back - &rv).norm();
        if residual > self.opts.residual_tol {
            return Err(GirsanovError::RangeConditionViolated { node, residual });
        }
        for (o, v) in out.iter_mut().zip(coeffs.iter()) {
            *o = scale * v;
        }
        Ok(())
    }
}

/// Correction integrand along a simulated nonlinear path.
pub fn drift_correction(
    linsys: &LinearizedSystem,
    sigma: &DiffusionField,
    eps: f64,
    path: &SdePath,
    mode: CorrectionMode,
    opts: CorrectionOpts,
) -> Result<DriftCorrectionSeries, GirsanovError> {
    if path.dim() != linsys.dim() {
        return Err(GirsanovError::DimensionMismatch(format!(
            "path dimension {} vs system dimension {}",
            path.dim(),
            linsys.dim()
        )));
    }
    let engine = CorrectionEngine::new(linsys, sigma, eps, mode, opts)?;
    let grid = *path.grid();
    let n_nodes = grid.n_nodes();
    let k = engine.k;
    let mut u = vec![0.0; n_nodes * k];
    let mut r_buf = vec![0.0; engine.n];
    let mut stopped_at = None;
    let radius2 = opts.localization_radius.map(|r| r * r);
    let origin = linsys.origin();

    for node in 0..n_nodes {
        let x = path.state(node);
        if let Some(r2) = radius2 {
            if stopped_at.is_none() {
                let d2: f64 = x.iter().zip(origin).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 > r2 {
                    stopped_at = Some(node);
                }
            }
            if stopped_at.is_some() {
                continue; // integrand frozen at zero
            }
        }
        engine.u_at(x, node, &mut r_buf, &mut u[node * k..(node + 1) * k])?;
    }

    Ok(DriftCorrectionSeries {
        grid,
        k,
        u,
        stopped_at,
    })
}

/// `log D` accumulated in the log domain:
/// `log D_{i+1} = log D_i + u_i . dB_i - 1/2 |u_i|^2 dt`.
pub fn stochastic_exponential(
    u: &DriftCorrectionSeries,
    driver: &BrownianPath,
) -> Result<GirsanovWeight, GirsanovError> {
    if u.grid != *driver.grid() {
        return Err(GirsanovError::GridMismatch);
    }
    if u.k != driver.k() {
        return Err(GirsanovError::DimensionMismatch(format!(
            "correction dimension {} vs driver dimension {}",
            u.k,
            driver.k()
        )));
    }
    let n_steps = u.grid.n_steps();
    let dt = u.grid.dt();
    let mut log_d = Vec::with_capacity(n_steps + 1);
    let mut quad_var = Vec::with_capacity(n_steps + 1);
    log_d.push(0.0);
    quad_var.push(0.0);
    for step in 0..n_steps {
        let ui = u.at_node(step);
        let db = driver.increment(step);
        let mut dot = 0.0;
        let mut norm2 = 0.0;
        for j in 0..u.k {
            dot += ui[j] * db[j];
            norm2 += ui[j] * ui[j];
        }
        let next = log_d[step] + dot - 0.5 * norm2 * dt;
        if !next.is_finite() {
            return Err(GirsanovError::NonFinite { node: step + 1 });
        }
        log_d.push(next);
        quad_var.push(quad_var[step] + norm2 * dt);
    }
    Ok(GirsanovWeight {
        grid: u.grid,
        log_d,
        quad_var,
        stopped_at: u.stopped_at,
    })
}

// ---------------------------------------------------------------------------
// Novikov functional
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct NovikovReport {
    pub estimate: f64,
    pub std_error: f64,
    pub escaped_fraction: f64,
    /// `exp(T/2 * sup_{|z| <= R} |u(x0+z)|^2)` from a grid search.
    pub certified_ceiling: f64,
    pub m_retained: usize,
    pub m_total: usize,
    /// Running means over retained paths at the four quarter checkpoints.
    /// `diverging` is set when they fail to stabilize (spread above 50%
    /// across checkpoints), the numeric signature of a Novikov functional
    /// dominated by ever-larger rare draws.
    pub checkpoint_means: Vec<f64>,
    pub diverging: bool,
}

/// Monte Carlo estimate of `E[exp(1/2 int_0^T |u|^2 ds)]` with paths leaving
/// `|x - x0| > radius` excluded and reported in `escaped_fraction`.
#[allow(clippy::too_many_arguments)]
pub fn novikov_estimate(
    f: &VectorField,
    sigma: &DiffusionField,
    linsys: &LinearizedSystem,
    eps: f64,
    x_init: &[f64],
    grid: TimeGrid,
    m: usize,
    base_seed: u64,
    radius: f64,
    mode: CorrectionMode,
    opts: CorrectionOpts,
) -> Result<NovikovReport, GirsanovError> {
    let engine = CorrectionEngine::new(linsys, sigma, eps, mode, opts)?;
    let k = engine.k;
    let n = engine.n;
    let u_at = move |x: &[f64], out: &mut [f64]| -> Result<(), GirsanovError> {
        let mut r_buf = vec![0.0; n];
        engine.u_at(x, 0, &mut r_buf, out)
    };
    novikov_with_u(&u_at, f, sigma, eps, k, x_init, grid, m, base_seed, radius)
}

/// Novikov estimate with the correction integrand supplied directly as a
/// state map writing `k` components.
#[allow(clippy::too_many_arguments)]
pub fn novikov_with_u<U>(
    u_at: &U,
    f: &VectorField,
    sigma: &DiffusionField,
    eps: f64,
    k: usize,
    x_init: &[f64],
    grid: TimeGrid,
    m: usize,
    base_seed: u64,
    radius: f64,
) -> Result<NovikovReport, GirsanovError>
where
    U: Fn(&[f64], &mut [f64]) -> Result<(), GirsanovError> + Sync,
{
    assert!(radius > 0.0);
    assert!(m >= 1);
    let dt = grid.dt();
    let radius2 = radius * radius;

    let per_path: Vec<Result<Option<f64>, GirsanovError>> = (0..m as u64)
        .into_par_iter()
        .map(|path_index| {
            let driver = sample_brownian(grid, sigma.cols(), base_seed, path_index);
            let path = match euler_maruyama(f, sigma, eps, x_init, &driver) {
                Ok(p) => p,
                // A path the integrator loses is certainly outside the ball.
                Err(SimError::NonFinite { .. }) | Err(SimError::DomainEscape { .. }) => {
                    return Ok(None)
                }
                Err(e) => {
                    return Err(GirsanovError::Sim {
                        path_index,
                        source: e,
                    })
                }
            };
            let mut qv = 0.0;
            let mut u = vec![0.0; k];
            for node in 0..grid.n_steps() {
                let x = path.state(node);
                let d2: f64 = x.iter().zip(x_init).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 > radius2 {
                    return Ok(None);
                }
                u_at(x, &mut u)?;
                let norm2: f64 = u.iter().map(|v| v * v).sum();
                qv += norm2 * dt;
            }
            // Terminal node still has to sit inside the ball.
            let xt = path.terminal();
            let d2: f64 = xt.iter().zip(x_init).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 > radius2 {
                return Ok(None);
            }
            Ok(Some((0.5 * qv).exp()))
        })
        .collect();

    let mut retained = Vec::with_capacity(m);
    let mut escaped = 0usize;
    for r in per_path {
        match r? {
            Some(v) => retained.push(v),
            None => escaped += 1,
        }
    }
    let m_retained = retained.len();
    let (estimate, std_error) = if m_retained == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let est = mean_and_se(&retained);
        (est.mean, est.std_error)
    };

    // Divergence heuristic: the running mean over growing prefixes must
    // stabilize; a spread above 50% across the quarter checkpoints means
    // rare huge draws still dominate the estimate.
    let mut checkpoint_means = Vec::new();
    if m_retained > 0 {
        for q in 1..=4usize {
            let take = (m_retained * q).div_ceil(4);
            let mean = retained[..take].iter().sum::<f64>() / take as f64;
            checkpoint_means.push(mean);
        }
    }
    let diverging = checkpoint_means.len() == 4 && {
        let max = checkpoint_means.iter().copied().fold(f64::MIN, f64::max);
        let min = checkpoint_means.iter().copied().fold(f64::MAX, f64::min);
        min > 0.0 && max / min > 1.5
    };

    let certified_ceiling = novikov_ceiling(u_at, x_init, k, radius, grid.span())?;

    Ok(NovikovReport {
        estimate,
        std_error,
        escaped_fraction: escaped as f64 / m as f64,
        certified_ceiling,
        m_retained,
        m_total: m,
        checkpoint_means,
        diverging,
    })
}

/// Grid-search `exp(T/2 * sup_{|z| <= R} |u(x0 + z)|^2)` over a tensor grid
/// in the ball (resolution depends on the dimension).
fn novikov_ceiling<U>(
    u_at: &U,
    x0: &[f64],
    k: usize,
    radius: f64,
    span: f64,
) -> Result<f64, GirsanovError>
where
    U: Fn(&[f64], &mut [f64]) -> Result<(), GirsanovError> + Sync,
{
    let n = x0.len();
    let res: usize = match n {
        1 => 2049,
        2 => 129,
        3 => 33,
        _ => 9,
    };
    let mut sup = 0.0f64;
    let mut u = vec![0.0; k];
    let mut x = vec![0.0; n];
    let total = res.pow(n as u32);
    let mut idx = vec![0usize; n];
    for flat in 0..total {
        let mut rem = flat;
        for slot in idx.iter_mut() {
            *slot = rem % res;
            rem /= res;
        }
        let mut norm2 = 0.0;
        for a in 0..n {
            let z = -radius + 2.0 * radius * idx[a] as f64 / (res - 1) as f64;
            x[a] = x0[a] + z;
            norm2 += z * z;
        }
        if norm2 > radius * radius {
            continue;
        }
        u_at(&x, &mut u)?;
        let mag: f64 = u.iter().map(|v| v * v).sum();
        sup = sup.max(mag);
    }
    Ok((0.5 * span * sup).exp())
}

// ---------------------------------------------------------------------------
// Measure-equivalence verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ObservableComparison {
    pub name: String,
    pub weighted_mean: f64,
    pub direct_mean: f64,
    pub se_weighted: f64,
    pub se_direct: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub ess: f64,
    pub ess_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub observables: Vec<ObservableComparison>,
    pub weights: WeightSummary,
    pub m_nonlinear: usize,
    pub m_linear: usize,
    pub confidence_k: f64,
    pub bias_allowance: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct EquivalenceOpts {
    /// Weak-discretization constant; the PASS window widens by `c_bias * dt`.
    pub c_bias: f64,
    /// Minimum effective-sample-size fraction before weights count as
    /// degenerate.
    pub min_ess_fraction: f64,
}

impl Default for EquivalenceOpts {
    fn default() -> Self {
        Self {
            c_bias: 0.0,
            min_ess_fraction: 0.01,
        }
    }
}

fn weight_summary(weights: &[f64]) -> WeightSummary {
    let m = weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    let sum2: f64 = weights.iter().map(|w| w * w).sum();
    let ess = if sum2 == 0.0 { 0.0 } else { sum * sum / sum2 };
    WeightSummary {
        min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: sum / m,
        ess,
        ess_fraction: ess / m,
    }
}

/// Shared assembly: per-observable weighted products vs direct draws.
fn assemble_equivalence(
    names: &[String],
    weighted_products: &[Vec<f64>],
    direct_values: &[Vec<f64>],
    weights: &[f64],
    dt: f64,
    confidence_k: f64,
    opts: EquivalenceOpts,
) -> Result<EquivalenceReport, GirsanovError> {
    let m = weights.len();
    let summary = weight_summary(weights);
    if summary.ess < opts.min_ess_fraction * m as f64 {
        return Err(GirsanovError::DegenerateWeights {
            ess: summary.ess,
            m,
        });
    }
    let bias_allowance = opts.c_bias * dt;
    let mut observables = Vec::with_capacity(names.len());
    let mut all_pass = true;
    for (i, name) in names.iter().enumerate() {
        let w_est = mean_and_se(&weighted_products[i]);
        let d_est = mean_and_se(&direct_values[i]);
        let difference = w_est.mean - d_est.mean;
        let tolerance = confidence_k
            * (w_est.std_error * w_est.std_error + d_est.std_error * d_est.std_error).sqrt()
            + bias_allowance;
        let pass = difference.abs() <= tolerance;
        all_pass &= pass;
        observables.push(ObservableComparison {
            name: name.clone(),
            weighted_mean: w_est.mean,
            direct_mean: d_est.mean,
            se_weighted: w_est.std_error,
            se_direct: d_est.std_error,
            difference,
            tolerance,
            pass,
        });
    }
    Ok(EquivalenceReport {
        observables,
        weights: summary,
        m_nonlinear: m,
        m_linear: direct_values.first().map_or(0, |v| v.len()),
        confidence_k,
        bias_allowance,
        all_pass,
    })
}

/// Compare weighted nonlinear estimates against the independent linear
/// ensemble, observable by observable.
///
/// `origin` is the fixed point: nonlinear paths are shifted by it before the
/// observables see them, matching the linear ensemble's `z` coordinates.
pub fn verify_measure_equivalence(
    nonlinear: &Ensemble,
    weights: &[GirsanovWeight],
    linear: &Ensemble,
    origin: &[f64],
    observables: &[Observable],
    confidence_k: f64,
    opts: EquivalenceOpts,
) -> Result<EquivalenceReport, GirsanovError> {
    if weights.len() != nonlinear.len() {
        return Err(GirsanovError::DimensionMismatch(format!(
            "{} weights for {} nonlinear paths",
            weights.len(),
            nonlinear.len()
        )));
    }
    if nonlinear.grid() != linear.grid() {
        return Err(GirsanovError::GridMismatch);
    }
    let w: Vec<f64> = weights.iter().map(|gw| gw.terminal_d()).collect();
    let names: Vec<String> = observables.iter().map(|o| o.name().to_string()).collect();

    let mut weighted_products = vec![Vec::with_capacity(nonlinear.len()); observables.len()];
    for (p, wi) in nonlinear.paths().iter().zip(&w) {
        let shifted = p.shifted(origin);
        for (slot, obs) in weighted_products.iter_mut().zip(observables) {
            slot.push(wi * obs.eval(&shifted));
        }
    }
    let mut direct_values = vec![Vec::with_capacity(linear.len()); observables.len()];
    for p in linear.paths() {
        for (slot, obs) in direct_values.iter_mut().zip(observables) {
            slot.push(obs.eval(p));
        }
    }
    assemble_equivalence(
        &names,
        &weighted_products,
        &direct_values,
        &w,
        nonlinear.grid().dt(),
        confidence_k,
        opts,
    )
}

// ---------------------------------------------------------------------------
// Streaming pipeline (no ensemble materialization)
// ---------------------------------------------------------------------------

/// End-to-end verification driver: simulates nonlinear paths with weights
/// and an independent linear ensemble path by path, never holding a full
/// ensemble in memory. Statistically identical to composing
/// `simulate_ensemble` + `drift_correction` + `stochastic_exponential` +
/// `verify_measure_equivalence` with the same seeds, bit for bit.
pub struct GirsanovPipeline<'a> {
    pub f: &'a VectorField,
    pub sigma: &'a DiffusionField,
    pub linsys: &'a LinearizedSystem,
    pub eps: f64,
    pub z0: Vec<f64>,
    pub grid: TimeGrid,
    pub m: usize,
    pub base_seed: u64,
    pub mode: CorrectionMode,
    pub corr: CorrectionOpts,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleCheckpoint {
    pub t: f64,
    pub node: usize,
    pub mean_d: f64,
    pub std_error: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub checkpoints: Vec<MartingaleCheckpoint>,
    pub escaped_fraction: f64,
    pub m: usize,
    pub confidence_k: f64,
    pub all_within: bool,
}

/// Per-observable weighted products, per-observable direct values, weights.
type EstimateSides = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);

struct NonlinearDraw {
    d_terminal: f64,
    d_checkpoints: Vec<f64>,
    escaped: bool,
    phi: Vec<f64>,
}

impl<'a> GirsanovPipeline<'a> {
    fn x_init(&self) -> Vec<f64> {
        self.linsys
            .origin()
            .iter()
            .zip(&self.z0)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Weight and shifted observable values for one nonlinear path.
    fn draw(
        &self,
        path_index: u64,
        seed: u64,
        checkpoint_nodes: &[usize],
        observables: &[Observable],
    ) -> Result<NonlinearDraw, GirsanovError> {
        let driver = sample_brownian(self.grid, self.sigma.cols(), seed, path_index);
        let x_init = self.x_init();
        let path = euler_maruyama(self.f, self.sigma, self.eps, &x_init, &driver)
            .map_err(|source| GirsanovError::Sim { path_index, source })?;
        let u = drift_correction(
            self.linsys,
            self.sigma,
            self.eps,
            &path,
            self.mode,
            self.corr,
        )?;
        let w = stochastic_exponential(&u, &driver)?;
        let phi = if observables.is_empty() {
            Vec::new()
        } else {
            let shifted = path.shifted(self.linsys.origin());
            observables.iter().map(|o| o.eval(&shifted)).collect()
        };
        Ok(NonlinearDraw {
            d_terminal: w.terminal_d(),
            d_checkpoints: checkpoint_nodes.iter().map(|n| w.d(*n)).collect(),
            escaped: w.stopped_at().is_some(),
            phi,
        })
    }

    fn nonlinear_draws(
        &self,
        seed: u64,
        checkpoint_nodes: &[usize],
        observables: &[Observable],
    ) -> Result<Vec<NonlinearDraw>, GirsanovError> {
        (0..self.m as u64)
            .into_par_iter()
            .map(|i| self.draw(i, seed, checkpoint_nodes, observables))
            .collect()
    }

    fn linear_draws(
        &self,
        seed: u64,
        observables: &[Observable],
        grid: TimeGrid,
    ) -> Result<Vec<Vec<f64>>, GirsanovError> {
        let drift = self.linsys.linear_drift_field();
        let diffusion = self.linsys.shifted_diffusion_field();
        let rows: Vec<Vec<f64>> = (0..self.m as u64)
            .into_par_iter()
            .map(|path_index| {
                let driver = sample_brownian(grid, diffusion.cols(), seed, path_index);
                let path = euler_maruyama(&drift, &diffusion, self.eps, &self.z0, &driver)
                    .map_err(|source| GirsanovError::Sim { path_index, source })?;
                Ok(observables.iter().map(|o| o.eval(&path)).collect())
            })
            .collect::<Result<_, GirsanovError>>()?;
        Ok(rows)
    }

    /// Equivalence verification at the pipeline's grid.
    pub fn run_equivalence(
        &self,
        observables: &[Observable],
        confidence_k: f64,
        opts: EquivalenceOpts,
    ) -> Result<EquivalenceReport, GirsanovError> {
        let (weighted, direct, weights) = self.estimate_sides(
            derive_seed(self.base_seed, ROLE_NONLINEAR),
            derive_seed(self.base_seed, ROLE_LINEAR),
            self.grid,
            observables,
        )?;
        let names: Vec<String> = observables.iter().map(|o| o.name().to_string()).collect();
        assemble_equivalence(
            &names,
            &weighted,
            &direct,
            &weights,
            self.grid.dt(),
            confidence_k,
            opts,
        )
    }

    fn estimate_sides(
        &self,
        seed_nl: u64,
        seed_lin: u64,
        grid: TimeGrid,
        observables: &[Observable],
    ) -> Result<EstimateSides, GirsanovError> {
        let sub = GirsanovPipeline {
            f: self.f,
            sigma: self.sigma,
            linsys: self.linsys,
            eps: self.eps,
            z0: self.z0.clone(),
            grid,
            m: self.m,
            base_seed: self.base_seed,
            mode: self.mode,
            corr: self.corr,
        };
        let draws = sub.nonlinear_draws(seed_nl, &[], observables)?;
        let weights: Vec<f64> = draws.iter().map(|d| d.d_terminal).collect();
        let mut weighted = vec![Vec::with_capacity(self.m); observables.len()];
        for d in &draws {
            for (slot, phi) in weighted.iter_mut().zip(&d.phi) {
                slot.push(d.d_terminal * phi);
            }
        }
        let lin_rows = sub.linear_draws(seed_lin, observables, grid)?;
        let mut direct = vec![Vec::with_capacity(self.m); observables.len()];
        for row in &lin_rows {
            for (slot, v) in direct.iter_mut().zip(row) {
                slot.push(*v);
            }
        }
        Ok((weighted, direct, weights))
    }

    /// Martingale normalization: `mean(D_t)` against 1 at the given time
    /// fractions of the horizon.
    pub fn run_martingale_check(
        &self,
        fractions: &[f64],
        confidence_k: f64,
    ) -> Result<MartingaleReport, GirsanovError> {
        let nodes: Vec<usize> = fractions
            .iter()
            .map(|frac| {
                self.grid
                    .nearest_node(self.grid.t0() + frac * self.grid.span())
            })
            .collect();
        let draws =
            self.nonlinear_draws(derive_seed(self.base_seed, ROLE_NONLINEAR), &nodes, &[])?;
        let escaped = draws.iter().filter(|d| d.escaped).count();
        let mut checkpoints = Vec::with_capacity(nodes.len());
        let mut all_within = true;
        for (j, node) in nodes.iter().enumerate() {
            let values: Vec<f64> = draws.iter().map(|d| d.d_checkpoints[j]).collect();
            let est = mean_and_se(&values);
            let within = (est.mean - 1.0).abs() <= confidence_k * est.std_error;
            all_within &= within;
            checkpoints.push(MartingaleCheckpoint {
                t: self.grid.node(*node),
                node: *node,
                mean_d: est.mean,
                std_error: est.std_error,
                within_tolerance: within,
            });
        }
        Ok(MartingaleReport {
            checkpoints,
            escaped_fraction: escaped as f64 / self.m as f64,
            m: self.m,
            confidence_k,
            all_within,
        })
    }

    /// Terminal weights for histogram export.
    pub fn terminal_weights(&self) -> Result<Vec<f64>, GirsanovError> {
        let draws = self.nonlinear_draws(derive_seed(self.base_seed, ROLE_NONLINEAR), &[], &[])?;
        Ok(draws.iter().map(|d| d.d_terminal).collect())
    }

    /// Per-observable weak-bias constants from a dt-halving run: with
    /// `delta(dt) = weighted - direct`, the model `delta ~ c dt` gives
    /// `c = 2 |delta(dt) - delta(dt/2)| / dt`.
    pub fn calibrate_bias(&self, observables: &[Observable]) -> Result<Vec<f64>, GirsanovError> {
        let seed_nl = derive_seed(self.base_seed, ROLE_CALIB_NONLINEAR);
        let seed_lin = derive_seed(self.base_seed, ROLE_CALIB_LINEAR);
        let dt = self.grid.dt();
        let mut deltas = Vec::new();
        for grid in [self.grid, self.grid.refine(2)] {
            let (weighted, direct, _) =
                self.estimate_sides(seed_nl, seed_lin, grid, observables)?;
            let mut row = Vec::with_capacity(observables.len());
            for i in 0..observables.len() {
                row.push(mean_and_se(&weighted[i]).mean - mean_and_se(&direct[i]).mean);
            }
            deltas.push(row);
        }
        Ok((0..observables.len())
            .map(|i| 2.0 * (deltas[0][i] - deltas[1][i]).abs() / dt)
            .collect())
    }
}
