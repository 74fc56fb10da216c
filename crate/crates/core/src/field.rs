//! Evaluable drift and diffusion coefficients with domain metadata.
//!
//! Evaluation writes into caller-provided buffers so the integrator's hot
//! loop stays allocation-free. Fields are cheaply cloneable (`Arc` closures)
//! and safe to share across path workers.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

type EvalFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Axis-aligned box on which a field evaluation is trusted.
#[derive(Clone, Debug)]
pub struct DomainBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Self { lo, hi }
    }

    /// The whole space: every coordinate unconstrained.
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Drift coefficient `f: R^n -> R^n` with optional analytic Jacobian.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: EvalFn,
    jacobian: Option<EvalFn>, // row-major n*n output
    domain: DomainBox,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim >= 1);
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: None,
            domain: DomainBox::unbounded(dim),
        }
    }

    /// Scalar field from a plain `f64 -> f64` closure.
    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, move |x, out| out[0] = f(x[0]))
    }

    /// Attach an analytic Jacobian writing row-major `n*n` entries.
    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_domain(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), self.dim);
        self.domain = DomainBox::new(lo, hi);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.eval)(x, out);
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(x, &mut out);
        out
    }

    /// Analytic Jacobian if present, otherwise central finite differences.
    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(jac) => {
                let mut buf = vec![0.0; self.dim * self.dim];
                jac(x, &mut buf);
                DMatrix::from_row_slice(self.dim, self.dim, &buf)
            }
            None => self.fd_jacobian(x),
        }
    }

    /// Central finite-difference Jacobian with step `cbrt(eps) * max(1, |x|)`.
    pub fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = f64::EPSILON.cbrt() * norm.max(1.0);
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            self.eval(&xp, &mut fp);
            self.eval(&xm, &mut fm);
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }
        jac
    }

    /// Largest entrywise relative gap between the analytic and the
    /// finite-difference Jacobian over the given points.
    pub fn jacobian_discrepancy(&self, points: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in points {
            let a = self.jacobian_at(x);
            let fd = self.fd_jacobian(x);
            for (u, v) in a.iter().zip(fd.iter()) {
                let denom = u.abs().max(v.abs()).max(1.0);
                worst = worst.max((u - v).abs() / denom);
            }
        }
        worst
    }
}

/// Diffusion coefficient `sigma: R^n -> R^{n x k}`, written row-major.
#[derive(Clone)]
pub struct DiffusionField {
    rows: usize,
    cols: usize,
    eval: EvalFn,
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionField")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl DiffusionField {
    pub fn new<F>(rows: usize, cols: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(rows >= 1 && cols >= 1);
        Self {
            rows,
            cols,
            eval: Arc::new(eval),
        }
    }

    /// Scalar diffusion from a plain closure (n = k = 1).
    pub fn scalar<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, 1, move |x, out| out[0] = f(x[0]))
    }

    /// State-independent coefficient.
    pub fn constant(m: DMatrix<f64>) -> Self {
        let rows = m.nrows();
        let cols = m.ncols();
        let flat: Vec<f64> = m.transpose().as_slice().to_vec(); // row-major
        Self::new(rows, cols, move |_x, out| out.copy_from_slice(&flat))
    }

    /// Identity coefficient on `R^n`.
    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows * self.cols);
        (self.eval)(x, out);
    }

    pub fn matrix_at(&self, x: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.rows * self.cols];
        self.eval(x, &mut buf);
        DMatrix::from_row_slice(self.rows, self.cols, &buf)
    }
}
