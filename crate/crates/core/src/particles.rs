//! Euler-Maruyama simulation of the smoothed n-particle system with a
//! common noise channel.
//!
//! Each particle follows
//! `X <- X + b^delta(t, X, mu^{n,delta}) dt + sigma(t, X, mu^n) dB^i
//!        + sigma_bar(t, X, mu^n) dZ`
//! with synchronous updates reading the previous snapshot, i.i.d. Brownian
//! increments `dB^i` per particle, and one shared increment `dZ` per step.
//! The smoothed drift is fed the mollified empirical density; the
//! diffusions see the raw atomic measure.
//!
//! Randomness is organized in counter-based substreams keyed by
//! (seed, replication, stream), so results are bit-identical regardless of
//! how replications are scheduled across threads.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::coeffs::{w1_distance_1d, AtomicMeasure, CoeffError, CoefficientSet};
use crate::mollify::{Mollifier, MollifyError, SmoothingRule, DEFAULT_SMOOTHING_NODES};
use crate::rng::{stream_rng, StreamId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("particle {particle} left the finite range at t = {t}")]
    Blowup { particle: usize, t: f64 },
    #[error("particle {particle} left the drift grid at t = {t}; enlarge the box")]
    OutsideGrid { particle: usize, t: f64 },
    #[error("initial sampler failed: {0}")]
    InitFailure(String),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
}

/// Initial law nu for the i.i.d. particle draws.
#[derive(Debug, Clone)]
pub enum InitDensity {
    /// Isotropic normal with the given mean and scalar standard deviation.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Uniform on the axis-aligned box.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// All particles start at one point (no randomness consumed).
    PointMass { at: Vec<f64> },
}

impl InitDensity {
    pub fn dim(&self) -> usize {
        match self {
            InitDensity::Gaussian { mean, .. } => mean.len(),
            InitDensity::Uniform { lo, .. } => lo.len(),
            InitDensity::PointMass { at } => at.len(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::BadConfig(msg));
        match self {
            InitDensity::Gaussian { mean, std } => {
                if mean.is_empty() || mean.iter().any(|v| !v.is_finite()) {
                    return bad("Gaussian init mean must be finite and non-empty".into());
                }
                if !(*std > 0.0) || !std.is_finite() {
                    return bad(format!("Gaussian init std must be positive, got {std}"));
                }
            }
            InitDensity::Uniform { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return bad("Uniform init needs matching non-empty bounds".into());
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !a.is_finite() || !b.is_finite() || a >= b)
                {
                    return bad("Uniform init needs finite lo < hi per axis".into());
                }
            }
            InitDensity::PointMass { at } => {
                if at.is_empty() || at.iter().any(|v| !v.is_finite()) {
                    return bad("PointMass init needs a finite point".into());
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha12Rng, out: &mut [f64]) {
        match self {
            InitDensity::Gaussian { mean, std } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + std * z;
                }
            }
            InitDensity::Uniform { lo, hi } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = rng.gen_range(lo[j]..hi[j]);
                }
            }
            InitDensity::PointMass { at } => out.copy_from_slice(at),
        }
    }

    /// Density of nu at x; the point mass reports infinity at its atom.
    pub fn density(&self, x: &[f64]) -> f64 {
        match self {
            InitDensity::Gaussian { mean, std } => {
                let r2: f64 = x
                    .iter()
                    .zip(mean)
                    .map(|(xi, mi)| (xi - mi) * (xi - mi))
                    .sum();
                let norm = (std * (2.0 * std::f64::consts::PI).sqrt()).powi(x.len() as i32);
                (-r2 / (2.0 * std * std)).exp() / norm
            }
            InitDensity::Uniform { lo, hi } => {
                let inside = x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(xi, (a, b))| xi >= a && xi <= b);
                if inside {
                    1.0 / lo.iter().zip(hi).map(|(a, b)| b - a).product::<f64>()
                } else {
                    0.0
                }
            }
            InitDensity::PointMass { at } => {
                if x == at.as_slice() {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
        }
    }
}

/// How the smoothed drift is evaluated each step.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftEvalMode {
    /// Per-particle quadrature over the mollifier ball with exact inner
    /// drift sums. Faithful but O(n^2 * nodes) for interacting drifts.
    Direct,
    /// Tabulate the smoothed empirical density and the raw drift once per
    /// step on a uniform grid over `[-half_width, half_width]^d`, then
    /// smooth by quadrature with linear interpolation. The fast path for
    /// large n; errors out if a particle escapes the box.
    Gridded { half_width: f64, resolution: usize },
}

/// Full specification of one simulation study.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub coeffs: CoefficientSet,
    pub init: InitDensity,
    pub n: usize,
    pub horizon: f64,
    pub dt: f64,
    pub delta: f64,
    pub seed: u64,
    pub replications: usize,
    /// Store every `snapshot_stride`-th step (plus t = 0 and t = T).
    pub snapshot_stride: usize,
    /// Per-axis node count of the drift-smoothing quadrature.
    pub smoothing_nodes: usize,
    pub drift_mode: DriftEvalMode,
}

impl SimConfig {
    pub fn d(&self) -> usize {
        self.coeffs.d
    }

    pub fn m(&self) -> usize {
        self.coeffs.m
    }

    /// Number of Euler steps; `dt` must tile the horizon.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validated(self) -> Result<Self, SimError> {
        let coeffs = self.coeffs.clone().validated()?;
        let cfg = SimConfig { coeffs, ..self };
        if cfg.n == 0 {
            return Err(SimError::BadConfig("need at least one particle".into()));
        }
        if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
            return Err(SimError::BadConfig(format!(
                "horizon must be positive, got {}",
                cfg.horizon
            )));
        }
        if !(cfg.dt > 0.0) || cfg.dt > cfg.horizon {
            return Err(SimError::BadConfig(format!(
                "need 0 < dt <= horizon, got dt = {}",
                cfg.dt
            )));
        }
        let steps = cfg.horizon / cfg.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(SimError::BadConfig(format!(
                "dt = {} does not tile the horizon {}",
                cfg.dt, cfg.horizon
            )));
        }
        cfg.init.validate()?;
        if cfg.init.dim() != cfg.d() {
            return Err(SimError::BadConfig(format!(
                "initial law lives in d = {}, coefficients in d = {}",
                cfg.init.dim(),
                cfg.d()
            )));
        }
        if cfg.replications == 0 {
            return Err(SimError::BadConfig("need at least one replication".into()));
        }
        if cfg.snapshot_stride == 0 {
            return Err(SimError::BadConfig("snapshot stride must be >= 1".into()));
        }
        if cfg.smoothing_nodes < 2 {
            return Err(SimError::BadConfig(
                "drift smoothing needs at least 2 nodes per axis".into(),
            ));
        }
        if let DriftEvalMode::Gridded { half_width, resolution } = cfg.drift_mode {
            if !(half_width > 0.0) || resolution < 8 {
                return Err(SimError::BadConfig(
                    "gridded drift needs a positive box and resolution >= 8".into(),
                ));
            }
            if cfg.d() > 2 {
                return Err(SimError::BadConfig(
                    "gridded drift supports d <= 2".into(),
                ));
            }
        }
        // Mollifier construction validates delta.
        Mollifier::new(cfg.d(), cfg.delta)?;
        Ok(cfg)
    }

    /// A config with inert defaults for the knobs most tests do not care
    /// about (stride 1, direct drift, default smoothing rule).
    pub fn bare(coeffs: CoefficientSet, init: InitDensity, n: usize, horizon: f64, dt: f64, delta: f64, seed: u64) -> SimConfig {
        SimConfig {
            coeffs,
            init,
            n,
            horizon,
            dt,
            delta,
            seed,
            replications: 1,
            snapshot_stride: 1,
            smoothing_nodes: DEFAULT_SMOOTHING_NODES,
            drift_mode: DriftEvalMode::Direct,
        }
    }
}

/// Particle positions over the stored time grid, plus the common-noise
/// path: the empirical measure flow of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFlow {
    pub rep_id: u64,
    d: usize,
    n: usize,
    times: Vec<f64>,
    snapshots: Vec<Vec<f64>>,
    common_path: Vec<Vec<f64>>,
}

impl MeasureFlow {
    /// Assemble a flow from raw parts: stored-time playback and synthetic
    /// deterministic flows. `common_path` may be empty when no common
    /// noise was recorded.
    pub fn from_parts(
        rep_id: u64,
        d: usize,
        times: Vec<f64>,
        snapshots: Vec<Vec<f64>>,
        common_path: Vec<Vec<f64>>,
    ) -> Result<MeasureFlow, SimError> {
        if d == 0 {
            return Err(SimError::BadConfig("dimension zero".into()));
        }
        if times.is_empty() || times.len() != snapshots.len() {
            return Err(SimError::BadConfig(
                "need one snapshot per stored time".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(SimError::BadConfig(
                "times must be finite and strictly increasing".into(),
            ));
        }
        let len0 = snapshots[0].len();
        if len0 == 0 || len0 % d != 0 {
            return Err(SimError::BadConfig(format!(
                "snapshot length {len0} is not a positive multiple of d = {d}"
            )));
        }
        if snapshots
            .iter()
            .any(|s| s.len() != len0 || s.iter().any(|v| !v.is_finite()))
        {
            return Err(SimError::BadConfig(
                "snapshots must share a shape and stay finite".into(),
            ));
        }
        if !common_path.is_empty() {
            if common_path.len() != times.len() {
                return Err(SimError::BadConfig(
                    "common-noise path must align with the stored times".into(),
                ));
            }
            let m = common_path[0].len();
            if common_path.iter().any(|z| z.len() != m) {
                return Err(SimError::BadConfig(
                    "common-noise entries must share a shape".into(),
                ));
            }
        }
        Ok(MeasureFlow {
            rep_id,
            d,
            n: len0 / d,
            times,
            snapshots,
            common_path,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Flat `n x d` positions at stored index `j`.
    pub fn snapshot(&self, j: usize) -> &[f64] {
        &self.snapshots[j]
    }

    /// Accumulated common-noise path at stored index `j`.
    pub fn common_at(&self, j: usize) -> &[f64] {
        &self.common_path[j]
    }

    /// Width of the recorded common-noise path; zero when none was kept.
    pub fn common_dim(&self) -> usize {
        self.common_path.first().map_or(0, |z| z.len())
    }

    pub fn measure(&self, j: usize) -> AtomicMeasure<'_> {
        AtomicMeasure::new(self.d, &self.snapshots[j]).expect("snapshots are validated")
    }
}

/// Live state of one replication mid-simulation.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    d: usize,
    step_count: usize,
    time: f64,
    positions: Vec<f64>,
    particle_rngs: Vec<ChaCha12Rng>,
    common_rng: ChaCha12Rng,
    common_state: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn common_state(&self) -> &[f64] {
        &self.common_state
    }
}

/// Diagnostic knobs for [`simulate_with`]; the defaults reproduce the
/// plain contract.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Row i draws its randomness from substream `labels[i]`; must be a
    /// permutation of 0..n. Exercises exchangeability.
    pub labels: Option<Vec<usize>>,
    /// Replication index used for the common-noise stream only; lets two
    /// runs share one Z path while keeping idiosyncratic noise distinct.
    pub common_rep: Option<u64>,
}

/// Draw the n i.i.d. initial positions. Particle i consumes the head of
/// its own dynamics substream, so label permutations move initial draws
/// and Brownian paths together.
pub fn init_ensemble(cfg: &SimConfig, rep: u64) -> Result<ParticleEnsemble, SimError> {
    init_ensemble_with(cfg, rep, &SimOptions::default())
}

fn init_ensemble_with(
    cfg: &SimConfig,
    rep: u64,
    opts: &SimOptions,
) -> Result<ParticleEnsemble, SimError> {
    let d = cfg.d();
    if let Some(labels) = &opts.labels {
        let mut seen = labels.clone();
        seen.sort_unstable();
        if seen.len() != cfg.n || seen.iter().enumerate().any(|(i, &l)| i != l) {
            return Err(SimError::BadConfig(
                "labels must be a permutation of 0..n".into(),
            ));
        }
    }
    let stream_of = |i: usize| -> u64 {
        match &opts.labels {
            Some(labels) => labels[i] as u64,
            None => i as u64,
        }
    };
    let mut positions = vec![0.0; cfg.n * d];
    let mut particle_rngs = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = stream_rng(cfg.seed, rep, StreamId::Particle(stream_of(i)));
        cfg.init.sample(&mut rng, &mut positions[i * d..(i + 1) * d]);
        particle_rngs.push(rng);
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(SimError::InitFailure("non-finite initial draw".into()));
    }
    let common_rep = opts.common_rep.unwrap_or(rep);
    Ok(ParticleEnsemble {
        d,
        step_count: 0,
        time: 0.0,
        positions,
        particle_rngs,
        common_rng: stream_rng(cfg.seed, common_rep, StreamId::Common),
        common_state: vec![0.0; cfg.m()],
    })
}

/// Precomputed per-run machinery for the Euler step.
pub struct Stepper {
    moll: Mollifier,
    rule: SmoothingRule,
    drift_active: bool,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Stepper, SimError> {
        let moll = Mollifier::new(cfg.d(), cfg.delta)?;
        let rule = moll.smoothing_rule(cfg.smoothing_nodes);
        Ok(Stepper {
            moll,
            rule,
            drift_active: cfg.coeffs.drift.sup_bound() != 0.0,
        })
    }

    /// One synchronous Euler-Maruyama step.
    pub fn step(&self, ens: &mut ParticleEnsemble, cfg: &SimConfig) -> Result<(), SimError> {
        let d = ens.d;
        let m = cfg.m();
        let n = cfg.n;
        let t = ens.time;
        let dt = cfg.dt;
        let sqrt_dt = dt.sqrt();

        let prev = ens.positions.clone();
        let mu = AtomicMeasure::new(d, &prev)?;

        let mut dz = vec![0.0; m];
        for z in dz.iter_mut() {
            let g: f64 = ens.common_rng.sample(StandardNormal);
            *z = g * sqrt_dt;
        }

        let drift_grid = match (&cfg.drift_mode, self.drift_active) {
            (DriftEvalMode::Gridded { half_width, resolution }, true) => {
                Some(self.build_drift_grid(t, &prev, mu, cfg, *half_width, *resolution)?)
            }
            _ => None,
        };

        let mut bdelta = vec![0.0; d];
        let mut sig = vec![0.0; d * d];
        let mut sigbar = vec![0.0; d * m];
        let mut db = vec![0.0; d];
        for i in 0..n {
            let x = &prev[i * d..(i + 1) * d];
            if self.drift_active {
                match &drift_grid {
                    Some(grid) => grid
                        .smoothed_at(x, &self.rule, cfg.delta, &mut bdelta)
                        .map_err(|_| SimError::OutsideGrid { particle: i, t })?,
                    None => self.direct_smoothed_drift(t, x, &prev, mu, cfg, &mut bdelta)?,
                }
            } else {
                bdelta.fill(0.0);
            }
            cfg.coeffs.sigma.eval_into(t, x, mu, &mut sig)?;
            cfg.coeffs.sigma_bar.eval_into(t, x, mu, &mut sigbar)?;
            let rng = &mut ens.particle_rngs[i];
            for b in db.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *b = g * sqrt_dt;
            }
            let out = &mut ens.positions[i * d..(i + 1) * d];
            for j in 0..d {
                let mut v = x[j] + bdelta[j] * dt;
                for l in 0..d {
                    v += sig[j * d + l] * db[l];
                }
                for l in 0..m {
                    v += sigbar[j * m + l] * dz[l];
                }
                if !v.is_finite() {
                    return Err(SimError::Blowup { particle: i, t });
                }
                out[j] = v;
            }
        }

        for (s, z) in ens.common_state.iter_mut().zip(&dz) {
            *s += z;
        }
        ens.step_count += 1;
        ens.time = ens.step_count as f64 * dt;
        Ok(())
    }

    /// `b^delta(t, x, mu^{n,delta}) = sum_q w_q b(t, x - delta u_q, ...)`
    /// with the exact per-family inner evaluation at every quadrature node.
    fn direct_smoothed_drift(
        &self,
        t: f64,
        x: &[f64],
        prev: &[f64],
        mu: AtomicMeasure,
        cfg: &SimConfig,
        out: &mut [f64],
    ) -> Result<(), SimError> {
        let d = x.len();
        out.fill(0.0);
        let mut y = vec![0.0; d];
        let mut sample = vec![0.0; d];
        let needs_density = cfg.coeffs.drift.is_nemytskii();
        for (node, &w) in self.rule.nodes().chunks_exact(d).zip(self.rule.weights()) {
            for j in 0..d {
                y[j] = x[j] - cfg.delta * node[j];
            }
            let density = if needs_density {
                Some(self.moll.smooth_empirical(prev, &y)?[0])
            } else {
                None
            };
            cfg.coeffs.drift.eval(t, &y, mu, density, &mut sample)?;
            for j in 0..d {
                out[j] += w * sample[j];
            }
        }
        Ok(())
    }

    /// Tabulate the raw drift `b(t, y, mu^{n,delta}(y))` at the cell
    /// centers of the step grid.
    fn build_drift_grid(
        &self,
        t: f64,
        prev: &[f64],
        mu: AtomicMeasure,
        cfg: &SimConfig,
        half_width: f64,
        resolution: usize,
    ) -> Result<DriftGrid, SimError> {
        let d = cfg.d();
        let cells = resolution.pow(d as u32);
        let cell = 2.0 * half_width / resolution as f64;
        let delta = cfg.delta;

        // Exact smoothed empirical density at the cell centers: each
        // particle touches only the cells inside its kernel support.
        let mut rho = vec![0.0; cells];
        if cfg.coeffs.drift.is_nemytskii() {
            let inv_n = 1.0 / (prev.len() / d) as f64;
            let coord = |j: usize| -half_width + (j as f64 + 0.5) * cell;
            let window = (delta / cell).ceil() as isize + 1;
            match d {
                1 => {
                    for p in prev.chunks_exact(1) {
                        let center = ((p[0] + half_width) / cell - 0.5).round() as isize;
                        for j in (center - window).max(0)..=(center + window).min(resolution as isize - 1)
                        {
                            let y = coord(j as usize) - p[0];
                            rho[j as usize] += self.moll.eval_unchecked(&[y]) * inv_n;
                        }
                    }
                }
                _ => {
                    for p in prev.chunks_exact(2) {
                        let c0 = ((p[0] + half_width) / cell - 0.5).round() as isize;
                        let c1 = ((p[1] + half_width) / cell - 0.5).round() as isize;
                        let hi = resolution as isize - 1;
                        for j1 in (c1 - window).max(0)..=(c1 + window).min(hi) {
                            for j0 in (c0 - window).max(0)..=(c0 + window).min(hi) {
                                let y = [coord(j0 as usize) - p[0], coord(j1 as usize) - p[1]];
                                rho[(j0 + resolution as isize * j1) as usize] +=
                                    self.moll.eval_unchecked(&y) * inv_n;
                            }
                        }
                    }
                }
            }
        }

        let mut values = vec![0.0; cells * d];
        let mut point = vec![0.0; d];
        let mut bv = vec![0.0; d];
        for flat in 0..cells {
            let mut rem = flat;
            for axis in 0..d {
                point[axis] = -half_width + ((rem % resolution) as f64 + 0.5) * cell;
                rem /= resolution;
            }
            let density = cfg.coeffs.drift.is_nemytskii().then(|| rho[flat]);
            cfg.coeffs.drift.eval(t, &point, mu, density, &mut bv)?;
            values[flat * d..(flat + 1) * d].copy_from_slice(&bv);
        }
        Ok(DriftGrid {
            d,
            half_width,
            resolution,
            values,
        })
    }
}

/// Raw drift tabulated on a step grid, with linear interpolation.
struct DriftGrid {
    d: usize,
    half_width: f64,
    resolution: usize,
    values: Vec<f64>,
}

impl DriftGrid {
    /// Interpolated raw drift at y into `out`; error when y leaves the box.
    fn interp(&self, y: &[f64], out: &mut [f64]) -> Result<(), ()> {
        let res = self.resolution;
        let cell = 2.0 * self.half_width / res as f64;
        let d = self.d;
        let mut i0 = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for axis in 0..d {
            if y[axis].abs() > self.half_width {
                return Err(());
            }
            let pos = (y[axis] + self.half_width) / cell - 0.5;
            let base = pos.floor().clamp(0.0, (res - 2) as f64);
            i0[axis] = base as usize;
            frac[axis] = (pos - base).clamp(0.0, 1.0);
        }
        match d {
            1 => {
                let a = &self.values[i0[0] * d..];
                let b = &self.values[(i0[0] + 1) * d..];
                for j in 0..d {
                    out[j] = a[j] + frac[0] * (b[j] - a[j]);
                }
            }
            _ => {
                let idx = |p0: usize, p1: usize| (p0 + res * p1) * d;
                let (f0, f1) = (frac[0], frac[1]);
                for j in 0..d {
                    let v00 = self.values[idx(i0[0], i0[1]) + j];
                    let v10 = self.values[idx(i0[0] + 1, i0[1]) + j];
                    let v01 = self.values[idx(i0[0], i0[1] + 1) + j];
                    let v11 = self.values[idx(i0[0] + 1, i0[1] + 1) + j];
                    let lo = v00 + f0 * (v10 - v00);
                    let hi = v01 + f0 * (v11 - v01);
                    out[j] = lo + f1 * (hi - lo);
                }
            }
        }
        Ok(())
    }

    /// Quadrature smoothing of the tabulated drift at particle position x.
    fn smoothed_at(
        &self,
        x: &[f64],
        rule: &SmoothingRule,
        delta: f64,
        out: &mut [f64],
    ) -> Result<(), ()> {
        let d = self.d;
        out.fill(0.0);
        let mut y = [0.0f64; 2];
        let mut sample = [0.0f64; 2];
        for (node, &w) in rule.nodes().chunks_exact(d).zip(rule.weights()) {
            for j in 0..d {
                y[j] = x[j] - delta * node[j];
            }
            self.interp(&y[..d], &mut sample[..d])?;
            for j in 0..d {
                out[j] += w * sample[j];
            }
        }
        Ok(())
    }
}

/// Run one replication and record the flow at the configured stride.
pub fn simulate(cfg: &SimConfig, rep: u64) -> Result<MeasureFlow, SimError> {
    simulate_with(cfg, rep, &SimOptions::default())
}

pub fn simulate_with(
    cfg: &SimConfig,
    rep: u64,
    opts: &SimOptions,
) -> Result<MeasureFlow, SimError> {
    let steps = cfg.steps();
    let stepper = Stepper::new(cfg)?;
    let mut ens = init_ensemble_with(cfg, rep, opts)?;
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    let mut common_path = Vec::new();
    let mut record = |ens: &ParticleEnsemble| {
        times.push(ens.time);
        snapshots.push(ens.positions.clone());
        common_path.push(ens.common_state.clone());
    };
    record(&ens);
    for j in 1..=steps {
        stepper.step(&mut ens, cfg)?;
        if j % cfg.snapshot_stride == 0 || j == steps {
            record(&ens);
        }
    }
    Ok(MeasureFlow {
        rep_id: rep,
        d: cfg.d(),
        n: cfg.n,
        times,
        snapshots,
        common_path,
    })
}

/// Simulate every configured replication in parallel and reduce each flow
/// immediately, keeping memory bounded by the thread count. Results come
/// back in replication order regardless of scheduling.
pub fn run_replications<T: Send>(
    cfg: &SimConfig,
    reduce: impl Fn(MeasureFlow) -> Result<T, SimError> + Sync,
) -> Result<Vec<T>, SimError> {
    (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| simulate(cfg, rep).and_then(&reduce))
        .collect()
}

/// Collect all flows; convenient for small studies.
pub fn simulate_all(cfg: &SimConfig) -> Result<Vec<MeasureFlow>, SimError> {
    run_replications(cfg, Ok)
}

/// Ensemble-level two-sided path statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDiagnostics {
    /// Monte-Carlo mean of `sup_t |X^1_t|^q`.
    pub sup_moment_mean: f64,
    pub sup_moment_se: f64,
    /// Frequency of the event: some stored t has mass outside `[-K, K]^d`
    /// above epsilon.
    pub escape_frequency: f64,
    /// The Markov-type reference bound `c_q / (epsilon K^q)` with `c_q`
    /// the estimated sup moment.
    pub escape_bound: f64,
    /// W1 distance between the replication-wise terminal laws of the
    /// first and second particle (first coordinate); near zero under
    /// exchangeability.
    pub exchangeability_w1: f64,
}

pub fn path_diagnostics(
    flows: &[MeasureFlow],
    q: f64,
    box_radius: f64,
    epsilon: f64,
) -> Result<PathDiagnostics, SimError> {
    if flows.is_empty() {
        return Err(SimError::BadConfig("need at least one flow".into()));
    }
    if !(q > 0.0) || !(box_radius > 0.0) || !(epsilon > 0.0) {
        return Err(SimError::BadConfig(
            "need positive moment order, box radius, and mass deficit".into(),
        ));
    }
    let d = flows[0].dim();
    let mut sups = Vec::with_capacity(flows.len());
    let mut escapes = 0usize;
    let mut first_terminal = Vec::new();
    let mut second_terminal = Vec::new();
    for flow in flows {
        let n = flow.particles();
        let mut sup = 0.0f64;
        let mut escaped = false;
        for j in 0..flow.len() {
            let snap = flow.snapshot(j);
            let x1 = &snap[0..d];
            let norm = x1.iter().map(|v| v * v).sum::<f64>().sqrt();
            sup = sup.max(norm.powf(q));
            let inside = snap
                .chunks_exact(d)
                .filter(|p| p.iter().all(|c| c.abs() <= box_radius))
                .count();
            if (inside as f64) < (1.0 - epsilon) * n as f64 {
                escaped = true;
            }
        }
        sups.push(sup);
        escapes += escaped as usize;
        let last = flow.snapshot(flow.len() - 1);
        first_terminal.push(last[0]);
        if n >= 2 {
            second_terminal.push(last[d]);
        }
    }
    let r = sups.len() as f64;
    let mean = sups.iter().sum::<f64>() / r;
    let var = sups.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (r - 1.0).max(1.0);
    let exchangeability_w1 = if second_terminal.len() == first_terminal.len() {
        w1_distance_1d(&first_terminal, &second_terminal)?
    } else {
        0.0
    };
    Ok(PathDiagnostics {
        sup_moment_mean: mean,
        sup_moment_se: (var / r).sqrt(),
        escape_frequency: escapes as f64 / r,
        escape_bound: mean / (epsilon * box_radius.powf(q)),
        exchangeability_w1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{make_convolution_drift, DriftSpec, MatrixField};

    fn test_coeffs(d: usize, drift: DriftSpec, sigma: f64, sigma_bar: f64) -> CoefficientSet {
        let b_sup = drift.sup_bound();
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
            sigma_bar_sup: sigma_bar,
            test_mode: true,
        }
    }

    fn gaussian_init(d: usize) -> InitDensity {
        InitDensity::Gaussian {
            mean: vec![0.0; d],
            std: 1.0,
        }
    }

    #[test]
    fn initialization_is_deterministic() {
        let cfg = SimConfig::bare(
            test_coeffs(2, DriftSpec::zero(2), 1.0, 0.0),
            gaussian_init(2),
            16,
            1.0,
            0.5,
            0.25,
            99,
        )
        .validated()
        .unwrap();
        let a = init_ensemble(&cfg, 3).unwrap();
        let b = init_ensemble(&cfg, 3).unwrap();
        assert_eq!(a.positions(), b.positions());
        let c = init_ensemble(&cfg, 4).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn initial_sample_mean_sits_in_the_clt_band() {
        let n = 100_000;
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 1.0, 0.0),
            gaussian_init(1),
            n,
            1.0,
            1.0,
            0.25,
            2024,
        )
        .validated()
        .unwrap();
        let ens = init_ensemble(&cfg, 0).unwrap();
        let mean = ens.positions().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn single_particle_is_a_single_row() {
        let cfg = SimConfig::bare(
            test_coeffs(3, DriftSpec::zero(3), 1.0, 0.0),
            InitDensity::PointMass { at: vec![1.0, 2.0, 3.0] },
            1,
            1.0,
            1.0,
            0.25,
            1,
        )
        .validated()
        .unwrap();
        let ens = init_ensemble(&cfg, 0).unwrap();
        assert_eq!(ens.positions(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_coefficients_freeze_the_flow() {
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 0.0, 0.0),
            gaussian_init(1),
            8,
            0.5,
            0.1,
            0.25,
            7,
        )
        .validated()
        .unwrap();
        let flow = simulate(&cfg, 0).unwrap();
        assert_eq!(flow.len(), 6);
        for j in 1..flow.len() {
            assert_eq!(flow.snapshot(j), flow.snapshot(0));
        }
    }

    #[test]
    fn constant_drift_advances_every_coordinate() {
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::constant(vec![1.0]), 0.0, 0.0),
            InitDensity::PointMass { at: vec![0.0] },
            4,
            0.1,
            0.1,
            0.25,
            7,
        )
        .validated()
        .unwrap();
        let flow = simulate(&cfg, 0).unwrap();
        for &x in flow.snapshot(1) {
            assert!((x - 0.1).abs() < 1e-12, "moved to {x}");
        }
    }

    /// With state-independent sigma_bar the shared increment cancels in
    /// particle differences; with sigma = 0 the difference is exactly the
    /// initial offset up to one rounding of the additions.
    #[test]
    fn common_noise_cancels_in_pairwise_differences() {
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 0.0, 1.0),
            InitDensity::Uniform { lo: vec![-1.0], hi: vec![1.0] },
            2,
            0.1,
            0.1,
            0.25,
            21,
        )
        .validated()
        .unwrap();
        let flow = simulate(&cfg, 0).unwrap();
        let before = flow.snapshot(0)[0] - flow.snapshot(0)[1];
        let after = flow.snapshot(1)[0] - flow.snapshot(1)[1];
        assert!((after - before).abs() < 1e-12);
        // The particles themselves did move.
        assert_ne!(flow.snapshot(0)[0], flow.snapshot(1)[0]);
    }

    #[test]
    fn horizon_equal_to_dt_gives_two_snapshots() {
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 1.0, 0.0),
            gaussian_init(1),
            4,
            0.25,
            0.25,
            0.25,
            3,
        )
        .validated()
        .unwrap();
        let flow = simulate(&cfg, 0).unwrap();
        assert_eq!(flow.len(), 2);
        assert_eq!(flow.times(), &[0.0, 0.25]);
    }

    /// b = 0, sigma = 1: X_T ~ N(X_0, T), so the cross-sectional variance
    /// is Var(nu) + T; Euler is exact for additive noise.
    #[test]
    fn terminal_variance_matches_the_gaussian_oracle() {
        let n = 4096;
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 1.0, 0.0),
            gaussian_init(1),
            n,
            1.0,
            0.01,
            0.25,
            12345,
        )
        .validated()
        .unwrap();
        let flow = simulate(&cfg, 0).unwrap();
        let last = flow.snapshot(flow.len() - 1);
        let mean = last.iter().sum::<f64>() / n as f64;
        let var = last.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = 2.0 * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn simulation_is_bitwise_reproducible() {
        let drift = make_convolution_drift(
            |_t, y: &[f64], out: &mut [f64]| out[0] = (-y[0]).tanh(),
            1.0,
            "attraction",
        );
        let cfg = SimConfig::bare(
            test_coeffs(1, drift, 0.7, 0.3),
            gaussian_init(1),
            12,
            0.2,
            0.05,
            0.5,
            77,
        )
        .validated()
        .unwrap();
        let a = simulate(&cfg, 5).unwrap();
        let b = simulate(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = simulate(&cfg, 6).unwrap();
        assert_ne!(a.snapshot(1), c.snapshot(1));
    }

    /// Relabeling particles permutes rows exactly when no cross-particle
    /// sums enter the update (state-dependent sigma, no drift).
    #[test]
    fn label_permutations_permute_rows_exactly() {
        let mut coeffs = test_coeffs(1, DriftSpec::zero(1), 1.0, 0.5);
        coeffs.sigma = MatrixField::from_fn(1, 1, |_t, x, _mu, out| {
            out[0] = 1.0 / (1.0 + x[0] * x[0]);
        });
        let cfg = SimConfig::bare(coeffs, gaussian_init(1), 6, 0.2, 0.05, 0.25, 31)
            .validated()
            .unwrap();
        let labels = vec![4, 2, 0, 5, 1, 3];
        let base = simulate(&cfg, 0).unwrap();
        let permuted = simulate_with(
            &cfg,
            0,
            &SimOptions { labels: Some(labels.clone()), common_rep: None },
        )
        .unwrap();
        for j in 0..base.len() {
            for (row, &lab) in labels.iter().enumerate() {
                assert_eq!(permuted.snapshot(j)[row], base.snapshot(j)[lab]);
            }
        }
    }

    /// With an interacting drift the empirical measures still agree, up to
    /// resummation rounding in the atom sums.
    #[test]
    fn label_permutations_preserve_the_empirical_measure() {
        let drift = make_convolution_drift(
            |_t, y: &[f64], out: &mut [f64]| out[0] = (-y[0]).tanh(),
            1.0,
            "attraction",
        );
        let cfg = SimConfig::bare(
            test_coeffs(1, drift, 0.5, 0.0),
            gaussian_init(1),
            6,
            0.2,
            0.05,
            0.5,
            13,
        )
        .validated()
        .unwrap();
        let labels = vec![5, 3, 1, 0, 4, 2];
        let base = simulate(&cfg, 0).unwrap();
        let permuted = simulate_with(
            &cfg,
            0,
            &SimOptions { labels: Some(labels), common_rep: None },
        )
        .unwrap();
        let j = base.len() - 1;
        let mut a: Vec<f64> = base.snapshot(j).to_vec();
        let mut b: Vec<f64> = permuted.snapshot(j).to_vec();
        a.sort_by(|p, q| p.partial_cmp(q).unwrap());
        b.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    /// Every coefficient evaluation is finite here; only the Euler update
    /// itself overflows, which must surface as a blowup rather than as a
    /// coefficient error or a silent inf.
    #[test]
    fn position_overflow_raises_a_blowup_error() {
        let coeffs = test_coeffs(1, DriftSpec::constant(vec![1e308]), 0.0, 0.0);
        let cfg = SimConfig::bare(
            coeffs,
            InitDensity::PointMass { at: vec![1.7e308] },
            2,
            0.5,
            0.5,
            0.25,
            5,
        )
        .validated()
        .unwrap();
        match simulate(&cfg, 0) {
            Err(SimError::Blowup { particle: 0, .. }) => {}
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn gridded_and_direct_drifts_agree_for_an_interacting_kernel() {
        let make = || {
            make_convolution_drift(
                |_t, y: &[f64], out: &mut [f64]| out[0] = 0.5 * (-(y[0] * y[0])).exp() * y[0],
                0.5,
                "gaussian pull",
            )
        };
        let mut cfg = SimConfig::bare(
            test_coeffs(1, make(), 0.0, 0.0),
            InitDensity::Uniform { lo: vec![-1.0], hi: vec![1.0] },
            32,
            0.2,
            0.05,
            0.25,
            44,
        );
        cfg.drift_mode = DriftEvalMode::Direct;
        let direct = simulate(&cfg.clone().validated().unwrap(), 0).unwrap();
        cfg.drift_mode = DriftEvalMode::Gridded { half_width: 6.0, resolution: 2048 };
        let gridded = simulate(&cfg.validated().unwrap(), 0).unwrap();
        let j = direct.len() - 1;
        for (a, b) in direct.snapshot(j).iter().zip(gridded.snapshot(j)) {
            assert!((a - b).abs() < 5e-5, "direct {a} vs gridded {b}");
        }
    }

    #[test]
    fn escaping_the_drift_grid_is_reported() {
        let drift = make_convolution_drift(
            |_t, _y: &[f64], out: &mut [f64]| out[0] = 1.0,
            1.0,
            "push right",
        );
        let mut cfg = SimConfig::bare(
            test_coeffs(1, drift, 0.0, 0.0),
            InitDensity::PointMass { at: vec![0.0] },
            2,
            2.0,
            0.25,
            0.25,
            5,
        );
        cfg.drift_mode = DriftEvalMode::Gridded { half_width: 1.0, resolution: 64 };
        match simulate(&cfg.validated().unwrap(), 0) {
            Err(SimError::OutsideGrid { .. }) => {}
            other => panic!("expected grid escape, got {other:?}"),
        }
    }

    #[test]
    fn escape_frequency_is_monotone_in_the_box_and_zero_for_large_deficits() {
        let cfg = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 1.0, 0.0),
            gaussian_init(1),
            32,
            1.0,
            0.05,
            0.25,
            9,
        )
        .validated()
        .unwrap();
        let flows: Vec<MeasureFlow> = (0..20).map(|r| simulate(&cfg, r).unwrap()).collect();
        let mut last = f64::INFINITY;
        for k in [1.0, 2.0, 4.0, 8.0] {
            let report = path_diagnostics(&flows, 2.0, k, 0.1).unwrap();
            assert!(report.escape_frequency <= last);
            last = report.escape_frequency;
        }
        let generous = path_diagnostics(&flows, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(generous.escape_frequency, 0.0);
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let base = SimConfig::bare(
            test_coeffs(1, DriftSpec::zero(1), 1.0, 0.0),
            gaussian_init(1),
            4,
            1.0,
            0.3,
            0.25,
            1,
        );
        assert!(matches!(
            base.clone().validated(),
            Err(SimError::BadConfig(_))
        ));
        let mut ok = base;
        ok.dt = 0.25;
        assert!(ok.validated().is_ok());
    }
}
