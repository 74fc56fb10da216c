//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinAlgError {
    #[error("eigenvalue iteration did not converge")]
    EigenSolverFailure,
    #[error("singular value decomposition failed")]
    SvdFailure,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues of a real square matrix via the Schur decomposition.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, LinAlgError> {
    if a.nrows() != a.ncols() {
        return Err(LinAlgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.nrows() == 1 {
        return Ok(vec![Complex::new(a[(0, 0)], 0.0)]);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or(LinAlgError::EigenSolverFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64, LinAlgError> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest modulus over the spectrum.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64, LinAlgError> {
    Ok(eigenvalues(a)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Ratio of the largest to smallest singular value (`inf` when rank-deficient).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Moore-Penrose pseudo-inverse with singular values below `tol * s_max`
/// treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>, LinAlgError> {
    let svd = a.clone().svd(true, true);
    let cutoff = rel_tol * svd.singular_values.max();
    svd.pseudo_inverse(cutoff)
        .map_err(|_| LinAlgError::SvdFailure)
}

/// Numerical rank at relative tolerance `rel_tol`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let cutoff = rel_tol * sv.max();
    sv.iter().filter(|s| **s > cutoff).count()
}

/// Solve the continuous Lyapunov equation `A X + X A^T + Q = 0` by Kronecker
/// vectorization. Intended for the small systems this crate works with; the
/// solve is `O(n^6)` in the matrix dimension.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinAlgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinAlgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    assert_eq!(q.nrows(), n);
    assert_eq!(q.ncols(), n);
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(AX) = (I (x) A) vec(X); vec(X A^T) = (A (x) I) vec(X).
    let system = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = system.lu().solve(&rhs).ok_or(LinAlgError::SingularSystem)?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// `||A X + X A^T + Q||` (spectral norm of the residual).
pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    spectral_norm(&(a * x + x * a.transpose() + q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_rotation_are_imaginary() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let mut eig = eigenvalues(&a).unwrap();
        eig.sort_by(|x, y| x.im.partial_cmp(&y.im).unwrap());
        assert!(eig[0].re.abs() < 1e-12 && (eig[0].im + 1.0).abs() < 1e-12);
        assert!(eig[1].re.abs() < 1e-12 && (eig[1].im - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_lyapunov() {
        // A = -a, Q = F F^T = 1  =>  X = 1/(2a).
        let a = DMatrix::from_element(1, 1, -1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diagonal_lyapunov() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let q = DMatrix::identity(2, 2);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((x[(1, 1)] - 0.25).abs() < 1e-12);
        assert!(x[(0, 1)].abs() < 1e-14);
        assert!(lyapunov_residual(&a, &q, &x) <= 1e-10 * spectral_norm(&q));
    }

    #[test]
    fn lyapunov_nonsymmetric_drift() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let x = solve_lyapunov(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &q, &x) <= 1e-10 * spectral_norm(&q));
    }

    #[test]
    fn lyapunov_fails_on_imaginary_axis_spectrum() {
        // Rotation matrix: lambda_i + conj(lambda_j) = 0, Kronecker system singular.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let q = DMatrix::identity(2, 2);
        assert_eq!(solve_lyapunov(&a, &q), Err(LinAlgError::SingularSystem));
    }

    #[test]
    fn pseudo_inverse_of_column_matrix() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let p = pseudo_inverse(&a, 1e-12).unwrap();
        assert_eq!(p.nrows(), 1);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p[(0, 1)].abs() < 1e-12);
        assert_eq!(numerical_rank(&a, 1e-12), 1);
    }

    #[test]
    fn condition_number_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.5]));
        assert!((condition_number(&a) - 8.0).abs() < 1e-12);
    }
}
