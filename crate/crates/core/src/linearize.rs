//! Fixed-point location, hyperbolicity classification, and linearization
//! with an exact Taylor remainder.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::field::{DiffusionField, VectorField};
use crate::linalg::{self, LinAlgError};

pub const DEFAULT_HYPERBOLICITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error(
        "Newton did not converge in {iterations} iterations (best residual {residual_norm:.3e})"
    )]
    NoConvergence {
        best: Vec<f64>,
        residual_norm: f64,
        iterations: usize,
    },
    #[error("Newton hit a singular Jacobian twice")]
    SingularJacobian { at: Vec<f64> },
    #[error("eigenvalue solver failed")]
    EigenSolverFailure,
    #[error("initial guess lies outside the field domain")]
    GuessOutsideDomain,
}

impl From<LinAlgError> for LinearizeError {
    fn from(_: LinAlgError) -> Self {
        LinearizeError::EigenSolverFailure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    StableHyperbolic,
    UnstableHyperbolic,
    Saddle,
    NonHyperbolic,
}

/// All real parts beyond `tol` on one side, or on mixed sides, decide the
/// class; any real part within `tol` of zero makes the point non-hyperbolic.
pub fn classify_hyperbolicity(
    a: &DMatrix<f64>,
    tol: f64,
) -> Result<Classification, LinearizeError> {
    let eig = linalg::eigenvalues(a)?;
    classify_from_eigenvalues(&eig, tol)
}

fn classify_from_eigenvalues(
    eig: &[Complex<f64>],
    tol: f64,
) -> Result<Classification, LinearizeError> {
    let any_center = eig.iter().any(|l| l.re.abs() <= tol);
    if any_center {
        return Ok(Classification::NonHyperbolic);
    }
    let n_stable = eig.iter().filter(|l| l.re < -tol).count();
    Ok(if n_stable == eig.len() {
        Classification::StableHyperbolic
    } else if n_stable == 0 {
        Classification::UnstableHyperbolic
    } else {
        Classification::Saddle
    })
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub location: Vec<f64>,
    pub residual_norm: f64,
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub hyperbolicity_tol: f64,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            hyperbolicity_tol: DEFAULT_HYPERBOLICITY_TOL,
        }
    }
}

/// Newton iteration for `f(x) = 0` from `x_init`, using the analytic
/// Jacobian when the field carries one and central differences otherwise.
/// A rank-deficient Newton step falls back to one pseudo-inverse step; a
/// second singular Jacobian fails the search.
pub fn find_fixed_point(
    f: &VectorField,
    x_init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint, LinearizeError> {
    find_fixed_point_with(
        f,
        x_init,
        NewtonOpts {
            tol,
            max_iter,
            ..NewtonOpts::default()
        },
    )
}

pub fn find_fixed_point_with(
    f: &VectorField,
    x_init: &[f64],
    opts: NewtonOpts,
) -> Result<FixedPoint, LinearizeError> {
    if !f.domain().contains(x_init) {
        return Err(LinearizeError::GuessOutsideDomain);
    }
    let mut x = DVector::from_column_slice(x_init);
    let mut best = x.clone();
    let mut best_res = f64::INFINITY;
    let mut used_pinv = false;

    for iteration in 0..=opts.max_iter {
        let fx = DVector::from_vec(f.eval_vec(x.as_slice()));
        let res = fx.norm();
        if res < best_res {
            best_res = res;
            best = x.clone();
        }
        if res <= opts.tol {
            return finish_fixed_point(f, best.as_slice(), best_res, opts.hyperbolicity_tol);
        }
        if iteration == opts.max_iter {
            break;
        }
        let jac = f.jacobian_at(x.as_slice());
        let step = match jac.clone().lu().solve(&fx) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                if used_pinv {
                    return Err(LinearizeError::SingularJacobian {
                        at: x.as_slice().to_vec(),
                    });
                }
                used_pinv = true;
                let pinv = linalg::pseudo_inverse(&jac, 1e-12).map_err(|_| {
                    LinearizeError::SingularJacobian {
                        at: x.as_slice().to_vec(),
                    }
                })?;
                &pinv * &fx
            }
        };
        x -= step;
    }
    Err(LinearizeError::NoConvergence {
        best: best.as_slice().to_vec(),
        residual_norm: best_res,
        iterations: opts.max_iter,
    })
}

fn finish_fixed_point(
    f: &VectorField,
    x0: &[f64],
    residual_norm: f64,
    hyperbolicity_tol: f64,
) -> Result<FixedPoint, LinearizeError> {
    let jacobian = f.jacobian_at(x0);
    let eigenvalues = linalg::eigenvalues(&jacobian)?;
    let classification = classify_from_eigenvalues(&eigenvalues, hyperbolicity_tol)?;
    Ok(FixedPoint {
        location: x0.to_vec(),
        residual_norm,
        jacobian,
        eigenvalues,
        classification,
    })
}

/// The system in shifted coordinates `z = x - x0`: linear drift `A z`, the
/// exact Taylor remainder of the full drift, and the shifted diffusion.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    origin: Vec<f64>,
    a: DMatrix<f64>,
    f0: Vec<f64>,
    f: VectorField,
    sigma: DiffusionField,
}

impl LinearizedSystem {
    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn driver_dim(&self) -> usize {
        self.sigma.cols()
    }

    pub fn diffusion(&self) -> &DiffusionField {
        &self.sigma
    }

    /// Exact remainder `r(x) = f(x) - f(x0) - A (x - x0)` at the absolute
    /// coordinate `x`. At `x = x0` this is zero to the last bit.
    pub fn remainder(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.f.eval(x, out);
        for (i, slot) in out.iter_mut().enumerate() {
            let mut az = 0.0;
            for (j, xj) in x.iter().enumerate() {
                az += self.a[(i, j)] * (xj - self.origin[j]);
            }
            *slot -= self.f0[i] + az;
        }
    }

    pub fn remainder_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.remainder(x, &mut out);
        out
    }

    /// Drift of the comparison linear system, `z -> A z`.
    pub fn linear_drift_field(&self) -> VectorField {
        let a = self.a.clone();
        let a_jac = self.a.clone();
        let n = self.dim();
        VectorField::new(n, move |z, out| {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[(i, j)] * z[j];
                }
                out[i] = acc;
            }
        })
        .with_jacobian(move |_z, out| {
            for (flat, slot) in out.iter_mut().enumerate() {
                *slot = a_jac[(flat / n, flat % n)];
            }
        })
    }

    /// Diffusion of the comparison linear system, `z -> sigma(x0 + z)`.
    pub fn shifted_diffusion_field(&self) -> DiffusionField {
        let sigma = self.sigma.clone();
        let origin = self.origin.clone();
        let n = origin.len();
        DiffusionField::new(sigma.rows(), sigma.cols(), move |z, out| {
            let mut x = vec![0.0; n];
            for j in 0..n {
                x[j] = origin[j] + z[j];
            }
            sigma.eval(&x, out);
        })
    }
}

/// Build the linearized system at a located fixed point.
pub fn linearize(f: &VectorField, sigma: &DiffusionField, fp: &FixedPoint) -> LinearizedSystem {
    assert_eq!(f.dim(), fp.location.len());
    assert_eq!(sigma.rows(), f.dim());
    let f0 = f.eval_vec(&fp.location);
    LinearizedSystem {
        origin: fp.location.clone(),
        a: fp.jacobian.clone(),
        f0,
        f: f.clone(),
        sigma: sigma.clone(),
    }
}
