//! Compiled-in system presets and expression-based construction.

use hgsde::expr::{diffusion_field_from_exprs, parse_expr, vector_field_from_exprs};
use hgsde::mc::Observable;
use hgsde::sde::SdePath;
use hgsde::slowfast::SlowFastSystem;
use hgsde::{DiffusionField, VectorField};
use nalgebra::DMatrix;

use crate::config::{ConfigError, SlowFastConfig, SystemSpec};

/// Resolve a system spec to `(drift, diffusion, id)`.
pub fn resolve_system(
    spec: &SystemSpec,
) -> Result<(VectorField, DiffusionField, String), ConfigError> {
    if let Some(name) = &spec.preset {
        if spec.drift.is_some() || spec.diffusion.is_some() {
            return Err(ConfigError(
                "give either a preset or drift/diffusion expressions, not both".into(),
            ));
        }
        return preset(name);
    }
    let drift = spec
        .drift
        .as_ref()
        .ok_or_else(|| ConfigError("system needs a preset or drift expressions".into()))?;
    let f = vector_field_from_exprs(drift)
        .map_err(|e| ConfigError(format!("drift expression: {e}")))?;
    let sigma = match &spec.diffusion {
        Some(rows) => diffusion_field_from_exprs(rows, drift.len())
            .map_err(|e| ConfigError(format!("diffusion expression: {e}")))?,
        None => DiffusionField::identity(drift.len()),
    };
    if sigma.rows() != f.dim() {
        return Err(ConfigError(format!(
            "diffusion has {} rows but drift dimension is {}",
            sigma.rows(),
            f.dim()
        )));
    }
    Ok((f, sigma, format!("expr:{}", drift.join(";"))))
}

fn preset(name: &str) -> Result<(VectorField, DiffusionField, String), ConfigError> {
    let (f, sigma) = match name {
        "cubic" => (
            VectorField::scalar(|x| x - x.powi(3))
                .with_jacobian(|x, out| out[0] = 1.0 - 3.0 * x[0] * x[0]),
            DiffusionField::scalar(|x| 1.0 + 0.1 * x.sin()),
        ),
        "cubic-flat" => (
            VectorField::scalar(|x| x - x.powi(3))
                .with_jacobian(|x, out| out[0] = 1.0 - 3.0 * x[0] * x[0]),
            DiffusionField::scalar(|_| 1.0),
        ),
        "ou" => (
            VectorField::scalar(|x| -x).with_jacobian(|_x, out| out[0] = -1.0),
            DiffusionField::scalar(|_| 1.0),
        ),
        "brownian" => (
            VectorField::scalar(|_| 0.0).with_jacobian(|_x, out| out[0] = 0.0),
            DiffusionField::scalar(|_| 1.0),
        ),
        "dirac" => (
            VectorField::scalar(|_| 0.0).with_jacobian(|_x, out| out[0] = 0.0),
            DiffusionField::scalar(|_| 0.0),
        ),
        "w2inf" => (
            hgsde::w2inf_benchmark_drift(),
            DiffusionField::scalar(|_| 1.0),
        ),
        "rotation" => (
            VectorField::new(2, |x, out| {
                out[0] = x[1];
                out[1] = -x[0];
            })
            .with_jacobian(|_x, out| {
                out.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]);
            }),
            DiffusionField::constant(DMatrix::identity(2, 2)),
        ),
        other => {
            return Err(ConfigError(format!(
                "unknown system preset `{other}` (known: cubic, cubic-flat, ou, brownian, dirac, w2inf, rotation)"
            )))
        }
    };
    Ok((f, sigma, format!("preset:{name}")))
}

/// Observables over shifted coordinates, by name.
pub fn resolve_observables(names: &[String]) -> Result<Vec<Observable>, ConfigError> {
    names
        .iter()
        .map(|name| {
            Ok(match name.as_str() {
                "z" => Observable::new("z", |p: &SdePath| p.terminal()[0]),
                "z2" => Observable::new("z2", |p: &SdePath| p.terminal()[0].powi(2)),
                "exp_neg_z2" => {
                    Observable::new("exp_neg_z2", |p: &SdePath| (-p.terminal()[0].powi(2)).exp())
                }
                "abs_z" => Observable::new("abs_z", |p: &SdePath| p.terminal()[0].abs()),
                "sup_abs_z" => Observable::new("sup_abs_z", |p: &SdePath| {
                    let dim = p.dim();
                    (0..p.grid().n_nodes())
                        .map(|i| {
                            p.state(i)
                                .iter()
                                .take(dim)
                                .map(|v| v.abs())
                                .fold(0.0f64, f64::max)
                        })
                        .fold(0.0f64, f64::max)
                }),
                other => {
                    return Err(ConfigError(format!(
                        "unknown observable `{other}` (known: z, z2, exp_neg_z2, abs_z, sup_abs_z)"
                    )))
                }
            })
        })
        .collect()
}

type BlockClosure = Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static>;

/// Block closure from expressions over `x1..xn, y1..ym` (aliases `x`, `y`).
fn block_from_exprs(exprs: &[String], n: usize, m: usize) -> Result<BlockClosure, ConfigError> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    names.extend((1..=m).map(|i| format!("y{i}")));
    names.push("x".into());
    names.push("y".into());
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let parsed: Vec<hgsde::expr::Expr> = exprs
        .iter()
        .map(|e| parse_expr(e, &refs).map_err(|err| ConfigError(format!("`{e}`: {err}"))))
        .collect::<Result<_, _>>()?;
    Ok(Box::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
        let mut vars = Vec::with_capacity(x.len() + y.len() + 2);
        vars.extend_from_slice(x);
        vars.extend_from_slice(y);
        vars.push(x[0]);
        vars.push(y[0]);
        for (slot, expr) in out.iter_mut().zip(&parsed) {
            *slot = expr.eval(&vars);
        }
    }))
}

pub fn resolve_slowfast(
    cfg: &SlowFastConfig,
    sigma: f64,
) -> Result<(SlowFastSystem, String), ConfigError> {
    if let Some(name) = &cfg.preset {
        if name != "linear-relaxation" {
            return Err(ConfigError(format!(
                "unknown slow-fast preset `{name}` (known: linear-relaxation)"
            )));
        }
        return Ok((
            hgsde::slowfast::linear_relaxation_system(cfg.eps, sigma, cfg.rho),
            format!("preset:{name}"),
        ));
    }
    let fast_drift = cfg.fast_drift.as_ref().ok_or_else(|| {
        ConfigError("slow-fast system needs a preset or expression blocks".into())
    })?;
    let slow_drift = cfg
        .slow_drift
        .as_ref()
        .ok_or_else(|| ConfigError("missing slow_drift expressions".into()))?;
    let n = fast_drift.len();
    let m = slow_drift.len();
    let fast_noise = cfg
        .fast_noise
        .as_ref()
        .ok_or_else(|| ConfigError("missing fast_noise matrix".into()))?;
    let slow_noise = cfg
        .slow_noise
        .as_ref()
        .ok_or_else(|| ConfigError("missing slow_noise matrix".into()))?;
    let k = fast_noise
        .first()
        .map(|r| r.len())
        .ok_or_else(|| ConfigError("fast_noise must have at least one row".into()))?;
    if fast_noise.len() != n || fast_noise.iter().any(|r| r.len() != k) {
        return Err(ConfigError(format!("fast_noise must be {n}x{k}")));
    }
    if slow_noise.len() != m || slow_noise.iter().any(|r| r.len() != k) {
        return Err(ConfigError(format!("slow_noise must be {m}x{k}")));
    }
    let f = block_from_exprs(fast_drift, n, m)?;
    let g = block_from_exprs(slow_drift, n, m)?;
    let flat_fast: Vec<String> = fast_noise.iter().flatten().cloned().collect();
    let flat_slow: Vec<String> = slow_noise.iter().flatten().cloned().collect();
    let fnoise = block_from_exprs(&flat_fast, n, m)?;
    let gnoise = block_from_exprs(&flat_slow, n, m)?;
    Ok((
        SlowFastSystem::new(n, m, k, f, g, fnoise, gnoise, cfg.eps, sigma, cfg.rho),
        format!("expr:{}", fast_drift.join(";")),
    ))
}
