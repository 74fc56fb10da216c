//! Subcommand drivers: load a config, run the pipeline, write reports.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use hgsde::girsanov::{
    novikov_estimate, CorrectionMode, CorrectionOpts, EquivalenceOpts, EquivalenceReport,
    GirsanovError, GirsanovPipeline, MartingaleReport, NovikovReport,
};
use hgsde::io::{to_json_bytes, write_histogram_csv, SCHEMA_VERSION};
use hgsde::linearize::{find_fixed_point_with, Classification, FixedPoint, NewtonOpts};
use hgsde::mc::LinearFit;
use hgsde::regularity::{
    occupation_density_estimate, occupation_refinement_probe, regularization_convergence_study,
    sobolev_dichotomy_study, BoxPartition, ConvergenceSetup,
};
use hgsde::slowfast::{
    check_uniform_stability, concentration_statistics, pooled_concentration_fit, simulate_slowfast,
    trace_slow_manifold, ConcentrationReport, SlowFastOpts, StabilityReport, TraceOpts,
};
use hgsde::TimeGrid;

use crate::config::{
    load_config, ConfigError, GirsanovConfig, LinearizeConfig, RegularityConfig, SlowFastConfig,
};
use crate::systems::{resolve_observables, resolve_slowfast, resolve_system};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAIL: i32 = 1;
pub const EXIT_NON_HYPERBOLIC: i32 = 2;
pub const EXIT_DEGENERATE_WEIGHTS: i32 = 3;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_RUNTIME: i32 = 70;

fn fail_config(err: impl std::fmt::Display) -> i32 {
    eprintln!("config error: {err}");
    EXIT_CONFIG
}

fn fail_runtime(err: impl std::fmt::Display) -> i32 {
    eprintln!("error: {err}");
    EXIT_RUNTIME
}

fn write_bytes(out_dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(name), bytes)
}

/// Timestamped run metadata, kept out of report.json so report payloads
/// stay byte-identical across reruns.
#[derive(Serialize)]
struct RunMeta<'a> {
    schema_version: u32,
    command: &'a str,
    config: String,
    unix_time_secs: u64,
}

fn write_meta(out_dir: &Path, command: &str, config: &Path) -> std::io::Result<()> {
    let meta = RunMeta {
        schema_version: SCHEMA_VERSION,
        command,
        config: config.display().to_string(),
        unix_time_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_bytes(out_dir, "run_meta.json", &to_json_bytes(&meta))
}

#[derive(Serialize)]
struct EigPair {
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct FixedPointSummary {
    location: Vec<f64>,
    residual_norm: f64,
    jacobian: Vec<Vec<f64>>,
    eigenvalues: Vec<EigPair>,
    classification: Classification,
}

impl FixedPointSummary {
    fn from(fp: &FixedPoint) -> Self {
        Self {
            location: fp.location.clone(),
            residual_norm: fp.residual_norm,
            jacobian: matrix_rows(&fp.jacobian),
            eigenvalues: fp
                .eigenvalues
                .iter()
                .map(|l| EigPair { re: l.re, im: l.im })
                .collect(),
            classification: fp.classification,
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Serialize)]
struct LinearizeReport {
    schema_version: u32,
    system_id: String,
    fixed_point: FixedPointSummary,
}

pub fn run_linearize(config_path: &Path, out_dir: &Path, _seed: Option<u64>) -> i32 {
    let cfg: LinearizeConfig = match load_config(config_path, "linearize") {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };
    let (f, _sigma, system_id) = match resolve_system(&cfg.system) {
        Ok(s) => s,
        Err(e) => return fail_config(e),
    };
    if cfg.guess.len() != f.dim() {
        return fail_config(ConfigError(format!(
            "guess has dimension {} but the system is {}-dimensional",
            cfg.guess.len(),
            f.dim()
        )));
    }
    let fp = match find_fixed_point_with(
        &f,
        &cfg.guess,
        NewtonOpts {
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            hyperbolicity_tol: cfg.hyperbolicity_tol,
        },
    ) {
        Ok(fp) => fp,
        Err(e) => return fail_runtime(e),
    };
    let report = LinearizeReport {
        schema_version: SCHEMA_VERSION,
        system_id,
        fixed_point: FixedPointSummary::from(&fp),
    };
    if let Err(e) = write_bytes(out_dir, "report.json", &to_json_bytes(&report))
        .and_then(|_| write_meta(out_dir, "linearize", config_path))
    {
        return fail_runtime(e);
    }
    if fp.classification == Classification::NonHyperbolic {
        EXIT_NON_HYPERBOLIC
    } else {
        EXIT_OK
    }
}

#[derive(Serialize)]
struct GirsanovReport {
    schema_version: u32,
    system_id: String,
    eps: f64,
    z0: Vec<f64>,
    grid: TimeGrid,
    m: usize,
    base_seed: u64,
    mode: String,
    u_multiplier: f64,
    c_bias: f64,
    fixed_point: FixedPointSummary,
    martingale: Option<MartingaleReport>,
    novikov: Option<NovikovReport>,
    equivalence: EquivalenceReport,
}

pub fn run_girsanov_verify(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    let cfg: GirsanovConfig = match load_config(config_path, "girsanov-verify") {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };
    let (f, sigma, system_id) = match resolve_system(&cfg.system) {
        Ok(s) => s,
        Err(e) => return fail_config(e),
    };
    let observables = match resolve_observables(&cfg.observables) {
        Ok(o) => o,
        Err(e) => return fail_config(e),
    };
    let mode = match cfg.mode.as_str() {
        "invertible" => CorrectionMode::Invertible,
        "range-project" => CorrectionMode::RangeProject,
        other => {
            return fail_config(ConfigError(format!(
                "unknown mode `{other}` (invertible | range-project)"
            )))
        }
    };
    let base_seed = seed.unwrap_or(cfg.base_seed);
    let grid = match TimeGrid::to_horizon(cfg.t_end, cfg.n_steps) {
        Ok(g) => g,
        Err(e) => return fail_config(e),
    };

    let fp = match find_fixed_point_with(&f, &cfg.guess, NewtonOpts::default()) {
        Ok(fp) => fp,
        Err(e) => return fail_runtime(e),
    };
    if fp.classification == Classification::NonHyperbolic {
        eprintln!("fixed point at {:?} is non-hyperbolic", fp.location);
        return EXIT_NON_HYPERBOLIC;
    }
    let lin = hgsde::linearize(&f, &sigma, &fp);

    let corr = CorrectionOpts {
        u_multiplier: cfg.u_multiplier,
        localization_radius: cfg.radius,
        ..CorrectionOpts::default()
    };
    // Verification weights stay unlocalized: the discrete reweighting
    // identity is exact only with the full integrand.
    let verify_corr = CorrectionOpts {
        localization_radius: None,
        ..corr
    };
    let pipeline = GirsanovPipeline {
        f: &f,
        sigma: &sigma,
        linsys: &lin,
        eps: cfg.eps,
        z0: cfg.z0.clone(),
        grid,
        m: cfg.m,
        base_seed,
        mode,
        corr: verify_corr,
    };

    let c_bias = if cfg.calibrate {
        let calib = GirsanovPipeline {
            m: cfg.calibration_m.unwrap_or_else(|| (cfg.m / 5).max(1)),
            z0: cfg.z0.clone(),
            ..pipeline
        };
        match calib.calibrate_bias(&observables) {
            Ok(cs) => cs.into_iter().fold(0.0f64, f64::max),
            Err(e) => return fail_runtime(e),
        }
    } else {
        cfg.c_bias
    };

    let martingale = if cfg.martingale_fractions.is_empty() {
        None
    } else {
        let mart_pipeline = GirsanovPipeline {
            corr,
            z0: cfg.z0.clone(),
            ..pipeline
        };
        match mart_pipeline.run_martingale_check(&cfg.martingale_fractions, cfg.confidence_k) {
            Ok(rep) => Some(rep),
            Err(e) => return fail_runtime(e),
        }
    };

    let novikov = if cfg.novikov {
        let radius = match cfg.radius {
            Some(r) => r,
            None => return fail_config(ConfigError("novikov needs a radius".into())),
        };
        let x_init: Vec<f64> = lin
            .origin()
            .iter()
            .zip(&cfg.z0)
            .map(|(a, b)| a + b)
            .collect();
        match novikov_estimate(
            &f, &sigma, &lin, cfg.eps, &x_init, grid, cfg.m, base_seed, radius, mode, corr,
        ) {
            Ok(rep) => Some(rep),
            Err(e) => return fail_runtime(e),
        }
    } else {
        None
    };

    let equivalence = match pipeline.run_equivalence(
        &observables,
        cfg.confidence_k,
        EquivalenceOpts {
            c_bias,
            ..EquivalenceOpts::default()
        },
    ) {
        Ok(rep) => rep,
        Err(GirsanovError::DegenerateWeights { ess, m }) => {
            eprintln!("weights collapsed: effective sample size {ess:.2} of {m}");
            return EXIT_DEGENERATE_WEIGHTS;
        }
        Err(e) => return fail_runtime(e),
    };

    let weights = match pipeline.terminal_weights() {
        Ok(w) => w,
        Err(e) => return fail_runtime(e),
    };
    let mut hist = Vec::new();
    if let Err(e) = write_histogram_csv(&weights, cfg.histogram_bins, &mut hist) {
        return fail_runtime(e);
    }

    let all_pass = equivalence.all_pass;
    let report = GirsanovReport {
        schema_version: SCHEMA_VERSION,
        system_id,
        eps: cfg.eps,
        z0: cfg.z0.clone(),
        grid,
        m: cfg.m,
        base_seed,
        mode: cfg.mode.clone(),
        u_multiplier: cfg.u_multiplier,
        c_bias,
        fixed_point: FixedPointSummary::from(&fp),
        martingale,
        novikov,
        equivalence,
    };
    if let Err(e) = write_bytes(out_dir, "report.json", &to_json_bytes(&report))
        .and_then(|_| write_bytes(out_dir, "weights_histogram.csv", &hist))
        .and_then(|_| write_meta(out_dir, "girsanov-verify", config_path))
    {
        return fail_runtime(e);
    }
    if all_pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAIL
    }
}

#[derive(Serialize)]
struct ManifoldSummary {
    n_samples: usize,
    bifurcation_at: Option<usize>,
    max_real_part_range: (f64, f64),
    worst_residual: f64,
}

#[derive(Serialize)]
struct SlowFastReport {
    schema_version: u32,
    system_id: String,
    eps: f64,
    rho: f64,
    sigma_values: Vec<f64>,
    m: usize,
    base_seed: u64,
    burn_in: f64,
    grid: TimeGrid,
    manifold: ManifoldSummary,
    stability: StabilityReport,
    concentration: Vec<ConcentrationReport>,
    pooled_fit: Option<LinearFit>,
}

pub fn run_slowfast(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    let cfg: SlowFastConfig = match load_config(config_path, "slowfast") {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };
    let base_seed = seed.unwrap_or(cfg.base_seed);
    let grid = match TimeGrid::to_horizon(cfg.t_end, cfg.n_steps) {
        Ok(g) => g,
        Err(e) => return fail_config(e),
    };
    let sigma_values = if cfg.sigma_values.is_empty() {
        vec![cfg.sigma]
    } else {
        cfg.sigma_values.clone()
    };
    if cfg.y_grid.points < 2 {
        return fail_config(ConfigError("y_grid needs at least 2 points".into()));
    }
    let y_grid: Vec<Vec<f64>> = (0..cfg.y_grid.points)
        .map(|i| {
            vec![
                cfg.y_grid.min
                    + (cfg.y_grid.max - cfg.y_grid.min) * i as f64 / (cfg.y_grid.points - 1) as f64,
            ]
        })
        .collect();

    let mut concentration = Vec::new();
    let mut manifold_summary = None;
    let mut stability = None;
    let mut system_id = String::new();
    for &sigma in &sigma_values {
        let (sys, id) = match resolve_slowfast(&cfg, sigma) {
            Ok(s) => s,
            Err(e) => return fail_config(e),
        };
        if sys.slow_dim() != 1 {
            return fail_config(ConfigError(
                "config-driven manifold tracing supports one slow dimension".into(),
            ));
        }
        system_id = id;
        let manifold =
            match trace_slow_manifold(&sys, &y_grid, &cfg.manifold_guess, TraceOpts::default()) {
                Ok(m) => m,
                Err(e) => return fail_runtime(e),
            };
        if manifold_summary.is_none() {
            let lo = manifold
                .max_real_part
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = manifold
                .max_real_part
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            manifold_summary = Some(ManifoldSummary {
                n_samples: manifold.len(),
                bifurcation_at: manifold.bifurcation_at,
                max_real_part_range: (lo, hi),
                worst_residual: manifold
                    .residual_norm
                    .iter()
                    .copied()
                    .fold(0.0f64, f64::max),
            });
            stability = Some(check_uniform_stability(&manifold, cfg.stability_margin));
            let mut csv = Vec::new();
            use std::io::Write;
            let _ = writeln!(csv, "# schema_version: {SCHEMA_VERSION}");
            let _ = writeln!(csv, "y,x_star,max_real_part");
            for i in 0..manifold.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{}",
                    manifold.ys[i][0], manifold.x_star[i][0], manifold.max_real_part[i]
                );
            }
            if let Err(e) = write_bytes(out_dir, "manifold.csv", &csv) {
                return fail_runtime(e);
            }
        }
        let ensemble = match simulate_slowfast(
            &sys,
            &cfg.x0,
            &cfg.y0,
            grid,
            cfg.m,
            base_seed,
            SlowFastOpts::default(),
        ) {
            Ok(e) => e,
            Err(e) => return fail_runtime(e),
        };
        match concentration_statistics(&sys, &ensemble, &manifold, &cfg.h_values, cfg.burn_in) {
            Ok(rep) => concentration.push(rep),
            Err(e) => return fail_runtime(e),
        }
    }

    let refs: Vec<&ConcentrationReport> = concentration.iter().collect();
    let pooled_fit = pooled_concentration_fit(&refs).ok();

    let mut csv = Vec::new();
    {
        use std::io::Write;
        let _ = writeln!(csv, "# schema_version: {SCHEMA_VERSION}");
        let _ = writeln!(csv, "sigma,h,exit_fraction,ci_low,ci_high");
        for rep in &concentration {
            for i in 0..rep.h_values.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    rep.sigma,
                    rep.h_values[i],
                    rep.exit_fractions[i],
                    rep.ci_low[i],
                    rep.ci_high[i]
                );
            }
        }
    }

    let stability = stability.expect("at least one sigma runs");
    let fit_ok = match (cfg.require_fit, &pooled_fit, cfg.min_r_squared) {
        (false, _, _) => true,
        (true, None, _) => false,
        (true, Some(fit), Some(min_r2)) => fit.r_squared >= min_r2,
        (true, Some(_), None) => true,
    };
    let stable = stability.uniformly_stable;

    let report = SlowFastReport {
        schema_version: SCHEMA_VERSION,
        system_id,
        eps: cfg.eps,
        rho: cfg.rho,
        sigma_values,
        m: cfg.m,
        base_seed,
        burn_in: cfg.burn_in,
        grid,
        manifold: manifold_summary.expect("manifold traced"),
        stability,
        concentration,
        pooled_fit,
    };
    if let Err(e) = write_bytes(out_dir, "report.json", &to_json_bytes(&report))
        .and_then(|_| write_bytes(out_dir, "concentration.csv", &csv))
        .and_then(|_| write_meta(out_dir, "slowfast", config_path))
    {
        return fail_runtime(e);
    }
    if stable && fit_ok {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAIL
    }
}

#[derive(Serialize)]
#[serde(tag = "kind")]
enum RegularityReportBody {
    #[serde(rename = "sobolev-dichotomy")]
    Sobolev(hgsde::regularity::SobolevDichotomyReport),
    #[serde(rename = "occupation")]
    Occupation {
        probe: Option<Box<hgsde::regularity::OccupationProbe>>,
        table: Option<Box<hgsde::regularity::OccupationTable>>,
    },
    #[serde(rename = "convergence")]
    Convergence(hgsde::regularity::ConvergenceReport),
}

#[derive(Serialize)]
struct RegularityReport {
    schema_version: u32,
    base_seed: u64,
    #[serde(flatten)]
    body: RegularityReportBody,
}

pub fn run_regularity(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> i32 {
    let cfg: RegularityConfig = match load_config(config_path, "regularity") {
        Ok(c) => c,
        Err(e) => return fail_config(e),
    };
    let base_seed = seed.unwrap_or(cfg.base_seed);
    let body = match cfg.kind.as_str() {
        "sobolev-dichotomy" => {
            let section = match &cfg.sobolev {
                Some(s) => s,
                None => return fail_config(ConfigError("missing [sobolev] section".into())),
            };
            match sobolev_dichotomy_study(
                &section.resolutions,
                section.n_paths,
                section.s_bounded,
                section.s_unbounded,
                section.p,
                base_seed,
                section.bounded_band,
                section.growth_min,
            ) {
                Ok(rep) => RegularityReportBody::Sobolev(rep),
                Err(e) => return fail_runtime(e),
            }
        }
        "occupation" => {
            let section = match &cfg.occupation {
                Some(s) => s,
                None => return fail_config(ConfigError("missing [occupation] section".into())),
            };
            let (f, sigma, _) = match resolve_system(&section.system) {
                Ok(s) => s,
                Err(e) => return fail_config(e),
            };
            let grid = match TimeGrid::to_horizon(section.t_end, section.n_steps) {
                Ok(g) => g,
                Err(e) => return fail_config(e),
            };
            let partition = BoxPartition::new(
                section.partition_lo.clone(),
                section.partition_hi.clone(),
                section.partition_res.clone(),
            );
            if section.probe_refinement {
                match occupation_refinement_probe(
                    &f,
                    &sigma,
                    section.eps,
                    grid,
                    &section.start_lo,
                    &section.start_hi,
                    &section.start_res,
                    &partition,
                    section.m_per_start,
                    base_seed,
                ) {
                    Ok(probe) => RegularityReportBody::Occupation {
                        probe: Some(Box::new(probe)),
                        table: None,
                    },
                    Err(e) => return fail_runtime(e),
                }
            } else {
                match occupation_density_estimate(
                    &f,
                    &sigma,
                    section.eps,
                    grid,
                    &section.start_lo,
                    &section.start_hi,
                    &section.start_res,
                    &partition,
                    section.m_per_start,
                    base_seed,
                ) {
                    Ok(table) => RegularityReportBody::Occupation {
                        probe: None,
                        table: Some(Box::new(table)),
                    },
                    Err(e) => return fail_runtime(e),
                }
            }
        }
        "convergence" => {
            let section = match &cfg.convergence {
                Some(s) => s,
                None => return fail_config(ConfigError("missing [convergence] section".into())),
            };
            let (f, sigma, _) = match resolve_system(&section.system) {
                Ok(s) => s,
                Err(e) => return fail_config(e),
            };
            let observables = match resolve_observables(&section.observables) {
                Ok(o) => o,
                Err(e) => return fail_config(e),
            };
            let grid = match TimeGrid::to_horizon(section.t_end, section.n_steps) {
                Ok(g) => g,
                Err(e) => return fail_config(e),
            };
            let setup = ConvergenceSetup {
                f: &f,
                sigma: &sigma,
                eps: section.eps,
                x0: section.x0.clone(),
                grid,
                m: section.m,
                base_seed,
                lattice_lo: section.lattice_lo.clone(),
                lattice_hi: section.lattice_hi.clone(),
                observables,
            };
            match regularization_convergence_study(&setup, &section.scales) {
                Ok(rep) => RegularityReportBody::Convergence(rep),
                Err(e) => return fail_runtime(e),
            }
        }
        other => {
            return fail_config(ConfigError(format!(
                "unknown regularity kind `{other}` (sobolev-dichotomy | occupation | convergence)"
            )))
        }
    };

    let csv = regularity_csv(&body);
    let report = RegularityReport {
        schema_version: SCHEMA_VERSION,
        base_seed,
        body,
    };
    if let Err(e) = write_bytes(out_dir, "report.json", &to_json_bytes(&report))
        .and_then(|_| write_bytes(out_dir, &csv.0, csv.1.as_bytes()))
        .and_then(|_| write_meta(out_dir, "regularity", config_path))
    {
        return fail_runtime(e);
    }
    EXIT_OK
}

/// Plot-ready table for the regularity report: (file name, contents).
fn regularity_csv(body: &RegularityReportBody) -> (String, String) {
    use std::fmt::Write;
    let mut csv = format!("# schema_version: {SCHEMA_VERSION}\n");
    match body {
        RegularityReportBody::Sobolev(rep) => {
            let _ = writeln!(
                csv,
                "n_steps,mean_energy_s_bounded,mean_energy_s_unbounded,mean_norm_s_bounded,mean_norm_s_unbounded"
            );
            for i in 0..rep.resolutions.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    rep.resolutions[i],
                    rep.mean_energy_bounded[i],
                    rep.mean_energy_unbounded[i],
                    rep.mean_norm_bounded[i],
                    rep.mean_norm_unbounded[i]
                );
            }
            ("sobolev.csv".into(), csv)
        }
        RegularityReportBody::Occupation { probe, table } => {
            let _ = writeln!(
                csv,
                "partition,cell,start_integral,max_transition,max_transition_se"
            );
            let mut dump = |label: &str, t: &hgsde::regularity::OccupationTable| {
                for cell in 0..t.partition.n_cells() {
                    let _ = writeln!(
                        csv,
                        "{label},{cell},{},{},{}",
                        t.start_integral[cell], t.max_transition[cell], t.max_transition_se[cell]
                    );
                }
            };
            if let Some(p) = probe {
                dump("coarse", &p.coarse);
                dump("fine", &p.fine);
            }
            if let Some(t) = table {
                dump("base", t);
            }
            ("occupation.csv".into(), csv)
        }
        RegularityReportBody::Convergence(rep) => {
            let weak_cols: Vec<String> = rep
                .observable_names
                .iter()
                .map(|n| format!("weak_{n}"))
                .collect();
            let _ = writeln!(csv, "scale,strong_distance,{}", weak_cols.join(","));
            for (i, scale) in rep.scales.iter().enumerate() {
                let weak: Vec<String> = rep
                    .weak_distance
                    .iter()
                    .map(|per_obs| format!("{}", per_obs[i]))
                    .collect();
                let _ = writeln!(csv, "{scale},{},{}", rep.strong_distance[i], weak.join(","));
            }
            ("convergence.csv".into(), csv)
        }
    }
}
