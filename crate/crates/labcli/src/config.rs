//! Scenario files: a TOML document describing the coefficient presets,
//! the (n, delta) ladders, the diagnostic toggles, and the output layout.
//! Parsing is strict (unknown keys are errors) and validation happens
//! once, up front, so a running study never revisits config questions.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mvlab_core::coeffs::{
    make_convolution_drift, make_nemytskii_drift, CoefficientSet, DriftSpec, MatrixField,
};
use mvlab_core::particles::{DriftEvalMode, InitDensity, SimConfig};
use mvlab_core::spectral::TestFunction;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_stride() -> usize {
    1
}

fn default_nodes() -> usize {
    16
}

fn default_scale() -> f64 {
    1.0
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

fn default_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dimension: usize,
    pub seed: u64,
    pub replications: usize,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_nodes")]
    pub smoothing_nodes: usize,
    pub n_ladder: Vec<usize>,
    pub delta_ladder: Vec<f64>,
    pub coefficients: CoefficientChoice,
    pub init: InitChoice,
    pub grid: GridChoice,
    #[serde(default)]
    pub test_functions: TestFunctionChoice,
    #[serde(default)]
    pub diagnostics: DiagnosticToggles,
    #[serde(default)]
    pub output: OutputChoice,
}

/// Named drift presets with scalar diffusion entries; everything the two
/// shipped drift families need.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoefficientChoice {
    /// One of: zero, constant, convolution_kernel, nemytskii_arctan.
    pub drift: String,
    #[serde(default = "default_scale")]
    pub drift_scale: f64,
    pub sigma: f64,
    pub sigma_bar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitChoice {
    /// One of: gaussian, uniform, point.
    pub kind: String,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_scale")]
    pub std: f64,
    #[serde(default)]
    pub lo: f64,
    #[serde(default)]
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridChoice {
    pub half_width: f64,
    pub resolution: usize,
    /// Evaluate the smoothed drift through the per-step density grid
    /// instead of direct per-particle sums.
    #[serde(default)]
    pub drift_gridded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionChoice {
    /// 1-based Hermite degrees, one function per entry.
    #[serde(default)]
    pub hermite: Vec<usize>,
    /// (center, width) pairs.
    #[serde(default)]
    pub gaussian_bumps: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticToggles {
    #[serde(default)]
    pub martingale: bool,
    #[serde(default)]
    pub qv: bool,
    #[serde(default)]
    pub regularity: bool,
    #[serde(default)]
    pub distances: bool,
    /// Martingale window endpoints as fractions of the horizon.
    #[serde(default = "default_s_frac")]
    pub s_frac: f64,
    #[serde(default = "default_t_frac")]
    pub t_frac: f64,
    /// Left end of the sup-compact distance window.
    #[serde(default = "default_t0")]
    pub t0: f64,
}

fn default_s_frac() -> f64 {
    0.25
}

fn default_t_frac() -> f64 {
    0.75
}

fn default_t0() -> f64 {
    0.1
}

impl Default for DiagnosticToggles {
    fn default() -> Self {
        DiagnosticToggles {
            martingale: false,
            qv: false,
            regularity: false,
            distances: false,
            s_frac: default_s_frac(),
            t_frac: default_t_frac(),
            t0: default_t0(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputChoice {
    #[serde(default = "default_dir")]
    pub directory: String,
    /// Subset of {csv, json, svg}.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputChoice {
    fn default() -> Self {
        OutputChoice {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.name.is_empty() {
            return fail("scenario name is empty".into());
        }
        if self.dimension == 0 || self.dimension > 2 {
            return fail(format!("dimension must be 1 or 2, got {}", self.dimension));
        }
        if self.replications == 0 {
            return fail("need at least one replication".into());
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return fail(format!(
                "horizon and dt must be positive, got T = {}, dt = {}",
                self.horizon, self.dt
            ));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-12 * steps.max(1.0) {
            return fail(format!(
                "dt = {} does not divide the horizon {}",
                self.dt, self.horizon
            ));
        }
        if self.n_ladder.is_empty() {
            return fail("n_ladder is empty".into());
        }
        if self.n_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!(
                "n_ladder must be strictly increasing, got {:?}",
                self.n_ladder
            ));
        }
        if self.delta_ladder.is_empty() {
            return fail("delta_ladder is empty".into());
        }
        if self.delta_ladder.iter().any(|d| !(*d > 0.0)) {
            return fail(format!(
                "delta_ladder entries must be positive, got {:?}",
                self.delta_ladder
            ));
        }
        if self.delta_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return fail(format!(
                "delta_ladder must be strictly decreasing, got {:?}",
                self.delta_ladder
            ));
        }
        match self.coefficients.drift.as_str() {
            "zero" | "constant" | "convolution_kernel" | "nemytskii_arctan" => {}
            other => {
                return fail(format!(
                    "unknown drift preset \"{other}\"; expected zero, constant, \
                     convolution_kernel, or nemytskii_arctan"
                ))
            }
        }
        if !(self.coefficients.sigma > 0.0) {
            return fail(format!(
                "sigma must be positive (the scheme needs ellipticity), got {}",
                self.coefficients.sigma
            ));
        }
        if self.coefficients.sigma_bar < 0.0 || !self.coefficients.sigma_bar.is_finite() {
            return fail(format!(
                "sigma_bar must be finite and nonnegative, got {}",
                self.coefficients.sigma_bar
            ));
        }
        match self.init.kind.as_str() {
            "gaussian" => {
                if !(self.init.std > 0.0) {
                    return fail(format!(
                        "gaussian init needs a positive std, got {}",
                        self.init.std
                    ));
                }
            }
            "uniform" => {
                if !(self.init.hi > self.init.lo) {
                    return fail(format!(
                        "uniform init needs lo < hi, got [{}, {}]",
                        self.init.lo, self.init.hi
                    ));
                }
            }
            "point" => {}
            other => {
                return fail(format!(
                    "unknown init kind \"{other}\"; expected gaussian, uniform, or point"
                ))
            }
        }
        if !(self.grid.half_width > 0.0) || self.grid.resolution < 8 {
            return fail(format!(
                "grid needs positive half_width and resolution >= 8, got ({}, {})",
                self.grid.half_width, self.grid.resolution
            ));
        }
        if self.test_functions.hermite.iter().any(|k| *k == 0) {
            return fail("hermite test-function degrees are 1-based".into());
        }
        for (_, width) in &self.test_functions.gaussian_bumps {
            if !(*width > 0.0) {
                return fail(format!("gaussian bump widths must be positive, got {width}"));
            }
        }
        let d = &self.diagnostics;
        if (d.martingale || d.qv) && self.test_function_list().is_empty() {
            return fail("martingale and qv diagnostics need at least one test function".into());
        }
        if !(0.0 <= d.s_frac && d.s_frac < d.t_frac && d.t_frac <= 1.0) {
            return fail(format!(
                "martingale window fractions must satisfy 0 <= s < t <= 1, got ({}, {})",
                d.s_frac, d.t_frac
            ));
        }
        for f in &self.output.formats {
            if !matches!(f.as_str(), "csv" | "json" | "svg") {
                return fail(format!("unknown output format \"{f}\""));
            }
        }
        Ok(())
    }

    pub fn build_coefficients(&self) -> CoefficientSet {
        let d = self.dimension;
        let scale = self.coefficients.drift_scale;
        let (drift, b_sup) = match self.coefficients.drift.as_str() {
            "zero" => (DriftSpec::zero(d), 0.0),
            "constant" => {
                let sup = scale.abs() * (d as f64).sqrt();
                (DriftSpec::constant(vec![scale; d]), sup)
            }
            "convolution_kernel" => {
                // k(y) = scale * y exp(-|y|^2) per axis; peak at |y| = 2^{-1/2}.
                let kernel = move |_t: f64, y: &[f64], out: &mut [f64]| {
                    let r2 = y.iter().map(|c| c * c).sum::<f64>();
                    let damp = (-r2).exp();
                    for (o, c) in out.iter_mut().zip(y) {
                        *o = scale * c * damp;
                    }
                };
                let sup = scale.abs() * (0.5f64).sqrt() * (-0.5f64).exp() * (d as f64).sqrt();
                (
                    make_convolution_drift(kernel, sup, "gaussian-damped attraction kernel"),
                    sup,
                )
            }
            "nemytskii_arctan" => {
                let b = move |_t: f64, _x: &[f64], rho: f64, out: &mut [f64]| {
                    let v = scale * rho.atan();
                    for o in out.iter_mut() {
                        *o = v;
                    }
                };
                let sup = scale.abs() * std::f64::consts::FRAC_PI_2 * (d as f64).sqrt();
                (
                    make_nemytskii_drift(b, sup, "arctan of the local density"),
                    sup,
                )
            }
            other => unreachable!("validated config admitted drift preset {other}"),
        };
        let sigma = self.coefficients.sigma;
        let sigma_bar = self.coefficients.sigma_bar;
        CoefficientSet {
            d,
            m: 1,
            drift,
            sigma: MatrixField::scalar(d, d, sigma),
            sigma_bar: MatrixField::scalar(d, 1, sigma_bar),
            b_sup,
            kappa: sigma * sigma,
            beta: 1.0,
            hoelder_c: 1.0,
            sigma_sup: sigma * (d as f64).sqrt(),
            sigma_bar_sup: sigma_bar * (d as f64).sqrt(),
            test_mode: false,
        }
    }

    pub fn build_init(&self) -> InitDensity {
        match self.init.kind.as_str() {
            "gaussian" => InitDensity::Gaussian {
                mean: vec![self.init.mean; self.dimension],
                std: self.init.std,
            },
            "uniform" => InitDensity::Uniform {
                lo: vec![self.init.lo; self.dimension],
                hi: vec![self.init.hi; self.dimension],
            },
            "point" => InitDensity::PointMass {
                at: vec![self.init.mean; self.dimension],
            },
            other => unreachable!("validated config admitted init kind {other}"),
        }
    }

    pub fn to_sim_config(&self, n: usize, delta: f64) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::bare(
            self.build_coefficients(),
            self.build_init(),
            n,
            self.horizon,
            self.dt,
            delta,
            self.seed,
        );
        cfg.replications = self.replications;
        cfg.snapshot_stride = self.snapshot_stride;
        cfg.smoothing_nodes = self.smoothing_nodes;
        if self.grid.drift_gridded {
            cfg.drift_mode = DriftEvalMode::Gridded {
                half_width: self.grid.half_width,
                resolution: self.grid.resolution,
            };
        }
        cfg.validated()
            .map_err(|e| ConfigError::Invalid(format!("cell (n = {n}, delta = {delta}): {e}")))
    }

    pub fn test_function_list(&self) -> Vec<Arc<TestFunction>> {
        let mut out = Vec::new();
        for k in &self.test_functions.hermite {
            out.push(Arc::new(TestFunction::hermite(&vec![*k; self.dimension])));
        }
        for (center, width) in &self.test_functions.gaussian_bumps {
            out.push(Arc::new(TestFunction::gaussian_bump(
                &vec![*center; self.dimension],
                *width,
            )));
        }
        out
    }

    /// FNV-1a over the canonical JSON form of the effective config; the
    /// provenance stamp that re-emitted reports must reproduce.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}
