//! Experiment configuration schemas. Configs are TOML, schema-validated
//! before any computation; unknown keys are rejected.

use serde::Deserialize;

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    60
}

fn default_hyperbolicity_tol() -> f64 {
    1e-8
}

fn default_confidence_k() -> f64 {
    3.0
}

fn default_u_multiplier() -> f64 {
    1.0
}

fn default_mode() -> String {
    "invertible".to_string()
}

fn default_observables() -> Vec<String> {
    vec!["z".into(), "z2".into(), "exp_neg_z2".into()]
}

fn default_margin() -> f64 {
    0.5
}

fn default_bins() -> usize {
    40
}

/// A named preset or expression-defined coefficients (`x1..xn`, alias `x`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub preset: Option<String>,
    pub drift: Option<Vec<String>>,
    pub diffusion: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizeConfig {
    pub system: SystemSpec,
    pub guess: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_hyperbolicity_tol")]
    pub hyperbolicity_tol: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovConfig {
    pub system: SystemSpec,
    pub guess: Vec<f64>,
    pub eps: f64,
    pub z0: Vec<f64>,
    pub t_end: f64,
    pub n_steps: usize,
    pub m: usize,
    pub base_seed: u64,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    #[serde(default = "default_confidence_k")]
    pub confidence_k: f64,
    /// Weak-bias constant; overridden when `calibrate` is set.
    #[serde(default)]
    pub c_bias: f64,
    /// Calibrate `c_bias` with a dt-halving run before verifying.
    #[serde(default)]
    pub calibrate: bool,
    pub calibration_m: Option<usize>,
    /// Localization ball for the martingale check.
    pub radius: Option<f64>,
    /// Horizon fractions at which mean(D_t) is checked; empty disables the
    /// martingale section.
    #[serde(default)]
    pub martingale_fractions: Vec<f64>,
    #[serde(default = "default_u_multiplier")]
    pub u_multiplier: f64,
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Also estimate the Novikov functional on the localization ball.
    #[serde(default)]
    pub novikov: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YGridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowFastConfig {
    /// `linear-relaxation` or expression blocks below.
    pub preset: Option<String>,
    pub fast_drift: Option<Vec<String>>,
    pub slow_drift: Option<Vec<String>>,
    pub fast_noise: Option<Vec<Vec<String>>>,
    pub slow_noise: Option<Vec<Vec<String>>>,
    pub eps: f64,
    pub sigma: f64,
    #[serde(default)]
    pub rho: f64,
    /// Additional noise levels sharing the base seed; reports are pooled
    /// into one concentration fit.
    #[serde(default)]
    pub sigma_values: Vec<f64>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub t_end: f64,
    pub n_steps: usize,
    pub m: usize,
    pub base_seed: u64,
    pub burn_in: f64,
    pub h_values: Vec<f64>,
    pub y_grid: YGridSpec,
    pub manifold_guess: Vec<f64>,
    #[serde(default = "default_margin")]
    pub stability_margin: f64,
    /// Fail (exit 1) when no concentration fit is possible or its r^2 is
    /// below `min_r_squared`.
    #[serde(default)]
    pub require_fit: bool,
    pub min_r_squared: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevSection {
    pub resolutions: Vec<usize>,
    pub n_paths: usize,
    #[serde(default = "default_s_bounded")]
    pub s_bounded: f64,
    #[serde(default = "default_s_unbounded")]
    pub s_unbounded: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_bounded_band")]
    pub bounded_band: f64,
    #[serde(default = "default_growth_min")]
    pub growth_min: f64,
}

fn default_s_bounded() -> f64 {
    0.4
}

fn default_s_unbounded() -> f64 {
    0.6
}

fn default_p() -> f64 {
    4.0
}

fn default_bounded_band() -> f64 {
    0.25
}

fn default_growth_min() -> f64 {
    1.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationSection {
    pub system: SystemSpec,
    #[serde(default = "default_eps_one")]
    pub eps: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub start_lo: Vec<f64>,
    pub start_hi: Vec<f64>,
    pub start_res: Vec<usize>,
    pub partition_lo: Vec<f64>,
    pub partition_hi: Vec<f64>,
    pub partition_res: Vec<usize>,
    pub m_per_start: usize,
    /// Compare against a 2x refined partition on the same samples.
    #[serde(default = "default_true")]
    pub probe_refinement: bool,
}

fn default_eps_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub system: SystemSpec,
    pub eps: f64,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub n_steps: usize,
    pub m: usize,
    pub scales: Vec<f64>,
    pub lattice_lo: Vec<f64>,
    pub lattice_hi: Vec<f64>,
    #[serde(default = "default_conv_observables")]
    pub observables: Vec<String>,
}

fn default_conv_observables() -> Vec<String> {
    vec!["z".into()]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    /// `sobolev-dichotomy`, `occupation`, or `convergence`.
    pub kind: String,
    pub base_seed: u64,
    pub sobolev: Option<SobolevSection>,
    pub occupation: Option<OccupationSection>,
    pub convergence: Option<ConvergenceSection>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn load_config<T: serde::de::DeserializeOwned>(
    path: &std::path::Path,
    expected_experiment: &str,
) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| ConfigError(format!("invalid TOML in {}: {e}", path.display())))?;
    if let Some(exp) = table.get("experiment").and_then(|v| v.as_str()) {
        if exp != expected_experiment {
            return Err(ConfigError(format!(
                "config declares experiment `{exp}` but the subcommand expects `{expected_experiment}`"
            )));
        }
    }
    // The experiment tag is validated above; the typed schemas own the rest.
    table.remove("experiment");
    T::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError(format!("schema error: {e}")))
}
