//! Monte Carlo estimators, confidence helpers, and named path observables.

use std::sync::Arc;

use thiserror::Error;

use crate::sde::{Ensemble, SdePath};

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("expected {expected} weights, got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("weight {index} is not finite and positive")]
    BadWeight { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub m: usize,
}

/// Mean and standard error of the mean, accumulated in slice order so the
/// result does not depend on thread count.
pub fn mean_and_se(values: &[f64]) -> McEstimate {
    let m = values.len();
    assert!(m > 0, "mean_and_se needs at least one value");
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return McEstimate {
            mean,
            std_error: 0.0,
            m,
        };
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let var = ss / (m - 1) as f64;
    McEstimate {
        mean,
        std_error: (var / m as f64).sqrt(),
        m,
    }
}

/// Weighted Monte Carlo estimate of `E[w * phi]` over an ensemble.
///
/// The mean is `sum(w_i phi_i) / M` -- normalized by `M`, not by the weight
/// sum, so that with Girsanov weights it estimates `E[D phi]` directly.
pub fn mc_estimate<F>(
    ensemble: &Ensemble,
    observable: F,
    weights: Option<&[f64]>,
) -> Result<McEstimate, McError>
where
    F: Fn(&SdePath) -> f64,
{
    let m = ensemble.len();
    if m == 0 {
        return Err(McError::EmptyEnsemble);
    }
    if let Some(w) = weights {
        if w.len() != m {
            return Err(McError::WeightLength {
                expected: m,
                got: w.len(),
            });
        }
        if let Some(index) = w.iter().position(|v| !v.is_finite()) {
            return Err(McError::BadWeight { index });
        }
    }
    let products: Vec<f64> = ensemble
        .paths()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * observable(p)
        })
        .collect();
    Ok(mean_and_se(&products))
}

/// Least-squares line fit with the coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let xm = x.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let syy: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        1.0 - y
            .iter()
            .zip(x)
            .map(|(yv, xv)| {
                let resid = yv - (intercept + slope * xv);
                resid * resid
            })
            .sum::<f64>()
            / syy
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Wilson score interval for a binomial proportion at `z` standard normals.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    assert!(trials > 0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// A named path functional, used by verification reports.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<dyn Fn(&SdePath) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&SdePath) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    /// Terminal value of component `j`.
    pub fn terminal_component(j: usize) -> Self {
        Self::new(format!("x{}_T", j + 1), move |p: &SdePath| p.terminal()[j])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, path: &SdePath) -> f64 {
        (self.eval)(path)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Observable({})", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::field::{DiffusionField, VectorField};
    use crate::grid::TimeGrid;
    use crate::sde::simulate_ensemble;

    fn small_ensemble(m: usize) -> Ensemble {
        let grid = TimeGrid::to_horizon(1.0, 20).unwrap();
        let f = VectorField::scalar(|x| -x);
        let sigma = DiffusionField::scalar(|_| 1.0);
        simulate_ensemble(&f, &sigma, 1.0, &[1.0], grid, m, 13).unwrap()
    }

    #[test]
    fn constant_observable_unit_weights() {
        let ens = small_ensemble(16);
        let est = mc_estimate(&ens, |_| 2.5, None).unwrap();
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn zero_weights_give_zero_mean() {
        let ens = small_ensemble(8);
        let w = vec![0.0; 8];
        let est = mc_estimate(&ens, |p| p.terminal()[0], Some(&w)).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn unit_weights_equal_plain_mean_bitwise() {
        let ens = small_ensemble(33);
        let w = vec![1.0; 33];
        let weighted = mc_estimate(&ens, |p| p.terminal()[0], Some(&w)).unwrap();
        let plain = mc_estimate(&ens, |p| p.terminal()[0], None).unwrap();
        assert_eq!(weighted.mean.to_bits(), plain.mean.to_bits());
        assert_eq!(weighted.std_error.to_bits(), plain.std_error.to_bits());
    }

    #[test]
    fn weight_validation() {
        let ens = small_ensemble(4);
        assert_eq!(
            mc_estimate(&ens, |_| 1.0, Some(&[1.0, 1.0])).unwrap_err(),
            McError::WeightLength {
                expected: 4,
                got: 2
            }
        );
        assert_eq!(
            mc_estimate(&ens, |_| 1.0, Some(&[1.0, f64::NAN, 1.0, 1.0])).unwrap_err(),
            McError::BadWeight { index: 1 }
        );
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_proportion() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
        let (lo0, _) = wilson_interval(0, 50, 1.96);
        assert_eq!(lo0, 0.0);
    }

    #[test]
    fn ou_terminal_mean_against_closed_form() {
        let ens = small_ensemble(10_000);
        let est = mc_estimate(&ens, |p| p.terminal()[0], None).unwrap();
        let expect = (-1.0f64).exp();
        // 3 SE plus a small Euler-bias allowance at dt = 0.05.
        assert!((est.mean - expect).abs() <= 3.0 * est.std_error + 0.01);
    }

    #[test]
    fn brownian_increment_scaling_across_dt() {
        // Increment variances at dt and dt/4 have ratio 4 within 3 combined
        // standard errors (M = 1e4 increments each).
        let coarse = sample_brownian(TimeGrid::to_horizon(100.0, 10_000).unwrap(), 1, 3, 0);
        let fine = sample_brownian(TimeGrid::to_horizon(25.0, 10_000).unwrap(), 1, 3, 1);
        let vc = mean_and_se(coarse.increments());
        let vf = mean_and_se(fine.increments());
        let m = 10_000.0;
        let var_c = vc.std_error * vc.std_error * m;
        let var_f = vf.std_error * vf.std_error * m;
        let ratio = var_c / var_f;
        let se_ratio = ratio * (2.0 / m + 2.0 / m).sqrt();
        assert!(
            (ratio - 4.0).abs() <= 3.0 * se_ratio,
            "ratio {ratio} +- {se_ratio}"
        );
    }
}
