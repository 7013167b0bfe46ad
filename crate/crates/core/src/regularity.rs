//! Density estimation along measure flows and the regularity diagnostics
//! built on it: norm-decay curves against a `c (1 and t)^{-gamma}`
//! envelope, time-Hoelder exponent fits, the Hoelder interpolation check
//! between Lebesgue norms, and distances between flows in
//! `L^p([0,T]; L^xi)` and `C([t0,T]; L^xi)`.

use thiserror::Error;

use crate::mollify::{Mollifier, MollifyError};
use crate::particles::MeasureFlow;
use crate::spectral::bessel::bessel_norm;
use crate::spectral::{DensityGrid, SpectralError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("particle {particle} sits {excess} beyond the grid box plus bandwidth")]
    Coverage { particle: usize, excess: f64 },
    #[error("need at least {needed} usable points, found {got}")]
    FitWindow { needed: usize, got: usize },
    #[error("exponents must satisfy 1 <= xi < r, got xi = {xi}, r = {r}")]
    BadExponents { xi: f64, r: f64 },
    #[error("flows share fewer than two time points")]
    GridMismatch,
    #[error(transparent)]
    Mollify(#[from] MollifyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Kernel bandwidth choice for density estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthPlan {
    /// One bandwidth for every snapshot; required when densities from
    /// different particle counts are compared.
    Fixed(f64),
    /// Silverman-style `(4/(d+2))^{1/(d+4)} sigma_hat n^{-1/(d+4)}` from
    /// the snapshot's own spread.
    Silverman,
}

impl BandwidthPlan {
    pub fn bandwidth(&self, positions: &[f64], d: usize) -> f64 {
        match self {
            BandwidthPlan::Fixed(h) => *h,
            BandwidthPlan::Silverman => {
                let n = positions.len() / d;
                let mut spread = 0.0;
                for axis in 0..d {
                    let mut mean = 0.0;
                    for p in positions.chunks_exact(d) {
                        mean += p[axis];
                    }
                    mean /= n as f64;
                    let mut var = 0.0;
                    for p in positions.chunks_exact(d) {
                        var += (p[axis] - mean) * (p[axis] - mean);
                    }
                    spread += (var / (n as f64 - 1.0).max(1.0)).sqrt();
                }
                let sigma = (spread / d as f64).max(1e-3);
                let factor = (4.0 / (d as f64 + 2.0)).powf(1.0 / (d as f64 + 4.0));
                factor * sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0))
            }
        }
    }
}

/// Where and how densities are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySpec {
    pub half_width: f64,
    pub resolution: usize,
    pub bandwidth: BandwidthPlan,
}

/// Kernel density estimate of one snapshot on a uniform grid, using the
/// mollifier profile at the given bandwidth. Cell values equal
/// [`Mollifier::smooth_empirical`] at the cell centers bit for bit; each
/// particle only touches the cells inside its kernel support.
pub fn density_grid(
    flow: &MeasureFlow,
    time_index: usize,
    spec: &DensitySpec,
) -> Result<DensityGrid, RegError> {
    if time_index >= flow.len() {
        return Err(RegError::BadInput(format!(
            "time index {time_index} beyond the {} stored snapshots",
            flow.len()
        )));
    }
    let positions = flow.snapshot(time_index);
    let bw = spec.bandwidth.bandwidth(positions, flow.dim());
    density_grid_of_positions(positions, flow.dim(), spec.half_width, spec.resolution, bw)
}

pub fn density_grid_of_positions(
    positions: &[f64],
    d: usize,
    half_width: f64,
    resolution: usize,
    bandwidth: f64,
) -> Result<DensityGrid, RegError> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(RegError::BadInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if d > 2 {
        return Err(RegError::BadInput("density grids support d <= 2".into()));
    }
    for (i, p) in positions.chunks_exact(d).enumerate() {
        for c in p {
            let excess = c.abs() - half_width - bandwidth;
            if excess > 0.0 {
                return Err(RegError::Coverage { particle: i, excess });
            }
        }
    }
    let moll = Mollifier::new(d, bandwidth)?;
    let n = positions.len() / d;
    let inv_n = 1.0 / n as f64;
    let inv_d2 = 1.0 / (bandwidth * bandwidth);
    let res = resolution;
    if res < 2 {
        return Err(RegError::BadInput(format!(
            "resolution must be at least 2, got {res}"
        )));
    }
    let cell = 2.0 * half_width / res as f64;
    let coord = |j: usize| -half_width + (j as f64 + 0.5) * cell;
    let window = (bandwidth / cell).ceil() as isize + 1;
    let hi = res as isize - 1;
    let mut values = vec![0.0; res.pow(d as u32)];
    match d {
        1 => {
            for p in positions.chunks_exact(1) {
                let center = ((p[0] + half_width) / cell - 0.5).round() as isize;
                for j in (center - window).max(0)..=(center + window).min(hi) {
                    let diff = p[0] - coord(j as usize);
                    let r2 = diff * diff;
                    values[j as usize] += moll.eval_unit_r2(r2 * inv_d2);
                }
            }
        }
        _ => {
            for p in positions.chunks_exact(2) {
                let c0 = ((p[0] + half_width) / cell - 0.5).round() as isize;
                let c1 = ((p[1] + half_width) / cell - 0.5).round() as isize;
                for j1 in (c1 - window).max(0)..=(c1 + window).min(hi) {
                    for j0 in (c0 - window).max(0)..=(c0 + window).min(hi) {
                        let d0 = p[0] - coord(j0 as usize);
                        let mut r2 = d0 * d0;
                        let d1 = p[1] - coord(j1 as usize);
                        r2 += d1 * d1;
                        values[(j0 + res as isize * j1) as usize] +=
                            moll.eval_unit_r2(r2 * inv_d2);
                    }
                }
            }
        }
    }
    for v in values.iter_mut() {
        *v *= inv_n;
    }
    Ok(DensityGrid::from_values(d, half_width, res, values)?)
}

/// Least-squares fit of `ln y = intercept + slope ln x` over positive
/// pairs; the workhorse behind every power-law estimate here.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), RegError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(RegError::FitWindow { needed: 2, got: xs.len().min(ys.len()) });
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(RegError::BadInput(
            "log-log fit needs strictly positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(RegError::BadInput(
            "log-log fit needs at least two distinct abscissae".into(),
        ));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

/// Norm-decay curve of an ensemble against the `c (1 and t)^{-gamma}`
/// envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityCurve {
    pub times: Vec<f64>,
    /// L^q Monte-Carlo mean of the norm at each kept time.
    pub values: Vec<f64>,
    pub r: f64,
    pub w: f64,
    pub q: f64,
    pub fit_c: f64,
    pub fit_gamma: f64,
    /// Fraction of kept points above `1.05 fit_c (1 and t)^{-fit_gamma}`.
    pub envelope_violations: f64,
    pub envelope_ok: bool,
    /// Bandwidth of the first replication's first kept snapshot, recorded
    /// for provenance; Silverman plans vary it per snapshot.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrCurveSpec {
    pub r: f64,
    /// Moment of the Monte-Carlo mean across replications.
    pub q: f64,
    /// Bessel smoothness; 0 gives the plain `L^r` norm.
    pub w: f64,
    /// Drop all times strictly below this (the caller passes 10 dt).
    pub burn_in: f64,
    pub density: DensitySpec,
}

pub fn lr_curve(flows: &[MeasureFlow], spec: &LrCurveSpec) -> Result<RegularityCurve, RegError> {
    if flows.is_empty() {
        return Err(RegError::BadInput("need at least one flow".into()));
    }
    if !(spec.r >= 1.0) {
        return Err(RegError::BadInput(format!("need r >= 1, got {}", spec.r)));
    }
    if !(spec.q > 0.0) {
        return Err(RegError::BadInput(format!("need q > 0, got {}", spec.q)));
    }
    let times = flows[0].times();
    if flows.iter().any(|f| f.times() != times) {
        return Err(RegError::BadInput("flows disagree on the time grid".into()));
    }
    let kept: Vec<usize> = (0..times.len())
        .filter(|&j| times[j] >= spec.burn_in && times[j] > 0.0)
        .collect();
    if kept.len() < 4 {
        return Err(RegError::FitWindow { needed: 4, got: kept.len() });
    }

    let mut first_bandwidth = None;
    let mut values = Vec::with_capacity(kept.len());
    for &j in &kept {
        let mut acc = 0.0;
        for flow in flows {
            let positions = flow.snapshot(j);
            let bw = spec.density.bandwidth.bandwidth(positions, flow.dim());
            first_bandwidth.get_or_insert(bw);
            let grid = density_grid_of_positions(
                positions,
                flow.dim(),
                spec.density.half_width,
                spec.density.resolution,
                bw,
            )?;
            let norm = if spec.w == 0.0 {
                grid.lp_norm(spec.r)
            } else {
                bessel_norm(&grid, spec.w, spec.r)?
            };
            acc += norm.powf(spec.q);
        }
        let mean = (acc / flows.len() as f64).powf(1.0 / spec.q);
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(RegError::BadInput(format!(
                "norm estimate at t = {} is not positive and finite",
                times[j]
            )));
        }
        values.push(mean);
    }

    let kept_times: Vec<f64> = kept.iter().map(|&j| times[j]).collect();
    let fit_xs: Vec<f64> = kept_times.iter().filter(|t| **t <= 1.0).copied().collect();
    let fit_ys: Vec<f64> = kept_times
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t <= 1.0)
        .map(|(_, v)| *v)
        .collect();
    if fit_xs.len() < 4 {
        return Err(RegError::FitWindow { needed: 4, got: fit_xs.len() });
    }
    let (intercept, slope) = log_log_fit(&fit_xs, &fit_ys)?;
    let (fit_c, fit_gamma) = if slope < 0.0 {
        (intercept.exp(), -slope)
    } else {
        // A nonincreasing envelope cannot have a negative exponent; fall
        // back to the flat fit through the geometric mean.
        let flat = fit_ys.iter().map(|v| v.ln()).sum::<f64>() / fit_ys.len() as f64;
        (flat.exp(), 0.0)
    };
    let envelope = |t: f64| 1.05 * fit_c * t.min(1.0).powf(-fit_gamma);
    let violations = kept_times
        .iter()
        .zip(&values)
        .filter(|(t, v)| **v > envelope(**t))
        .count();
    let envelope_violations = violations as f64 / values.len() as f64;
    Ok(RegularityCurve {
        times: kept_times,
        values,
        r: spec.r,
        w: spec.w,
        q: spec.q,
        fit_c,
        fit_gamma,
        envelope_violations,
        envelope_ok: violations == 0,
        bandwidth: first_bandwidth.unwrap_or(0.0),
    })
}

/// Outcome of the time-Hoelder regression `dist ~ C gap^eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit {
    pub eta: f64,
    pub c: f64,
    pub pairs: usize,
    /// Set when every pairwise distance vanished; `eta` and `c` are then
    /// meaningless placeholders.
    pub degenerate: bool,
}

/// Hoelder fit from one precomputed density series: mean pairwise
/// `L^r` distances regressed on time gaps.
pub fn holder_fit_from_grids(
    times: &[f64],
    series: &[Vec<DensityGrid>],
    r: f64,
) -> Result<HolderFit, RegError> {
    if series.is_empty() || times.len() < 8 {
        return Err(RegError::FitWindow { needed: 8, got: times.len() });
    }
    if series.iter().any(|grids| grids.len() != times.len()) {
        return Err(RegError::BadInput(
            "every replication needs one grid per time".into(),
        ));
    }
    let mut gaps = Vec::new();
    let mut dists = Vec::new();
    for j in 0..times.len() {
        for k in (j + 1)..times.len() {
            let mut acc = 0.0;
            for grids in series {
                acc += lr_difference(&grids[j], &grids[k], r)?;
            }
            gaps.push(times[k] - times[j]);
            dists.push(acc / series.len() as f64);
        }
    }
    if dists.iter().all(|d| *d < 1e-15) {
        return Ok(HolderFit { eta: 0.0, c: 0.0, pairs: gaps.len(), degenerate: true });
    }
    // Zero distances at positive gaps carry no slope information; the fit
    // uses the strictly positive pairs.
    let (xs, ys): (Vec<f64>, Vec<f64>) = gaps
        .iter()
        .zip(&dists)
        .filter(|(_, d)| **d > 0.0)
        .map(|(g, d)| (*g, *d))
        .unzip();
    let (intercept, slope) = log_log_fit(&xs, &ys)?;
    Ok(HolderFit {
        eta: slope,
        c: intercept.exp(),
        pairs: xs.len(),
        degenerate: false,
    })
}

/// `||p(t) - p(s)||_{L^r}` on a shared grid.
fn lr_difference(a: &DensityGrid, b: &DensityGrid, r: f64) -> Result<f64, RegError> {
    if a.dim() != b.dim()
        || a.resolution() != b.resolution()
        || (a.half_width() - b.half_width()).abs() > 1e-12
    {
        return Err(RegError::GridMismatch);
    }
    let vol = a.cell_volume();
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs().powf(r))
        .sum();
    Ok((sum * vol).powf(1.0 / r))
}

/// Hoelder exponent of a simulated ensemble: densities at every stored
/// time from `t_left`, distances averaged across replications.
pub fn time_holder_fit(
    flows: &[MeasureFlow],
    r: f64,
    t_left: f64,
    spec: &DensitySpec,
) -> Result<HolderFit, RegError> {
    if flows.is_empty() {
        return Err(RegError::BadInput("need at least one flow".into()));
    }
    if !(t_left > 0.0) {
        return Err(RegError::BadInput("need t_left > 0".into()));
    }
    let times = flows[0].times();
    if flows.iter().any(|f| f.times() != times) {
        return Err(RegError::BadInput("flows disagree on the time grid".into()));
    }
    let kept: Vec<usize> = (0..times.len()).filter(|&j| times[j] >= t_left).collect();
    if kept.len() < 8 {
        return Err(RegError::FitWindow { needed: 8, got: kept.len() });
    }
    let kept_times: Vec<f64> = kept.iter().map(|&j| times[j]).collect();
    let mut series = Vec::with_capacity(flows.len());
    for flow in flows {
        let grids: Vec<DensityGrid> = kept
            .iter()
            .map(|&j| density_grid(flow, j, spec))
            .collect::<Result<_, _>>()?;
        series.push(grids);
    }
    holder_fit_from_grids(&kept_times, &series, r)
}

/// Hoelder interpolation `||f||_xi <= ||f||_1^theta ||f||_r^{1-theta}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationReport {
    pub xi: f64,
    pub r: f64,
    pub theta: f64,
    pub value: f64,
    pub bound: f64,
    /// `bound - value`; the inequality allows only rounding below zero.
    pub slack: f64,
}

pub fn interpolation_check(
    grid: &DensityGrid,
    xi: f64,
    r: f64,
) -> Result<InterpolationReport, RegError> {
    if !(xi >= 1.0) || !(xi < r) || !r.is_finite() {
        return Err(RegError::BadExponents { xi, r });
    }
    if grid.values().iter().any(|v| *v < 0.0) {
        return Err(RegError::BadInput(
            "interpolation check expects a nonnegative grid".into(),
        ));
    }
    let theta = (1.0 / xi - 1.0 / r) / (1.0 - 1.0 / r);
    let value = grid.lp_norm(xi);
    let bound = grid.lp_norm(1.0).powf(theta) * grid.lp_norm(r).powf(1.0 - theta);
    Ok(InterpolationReport {
        xi,
        r,
        theta,
        value,
        bound,
        slack: bound - value,
    })
}

/// Which flow metric to compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceMode {
    /// `(sum_j ||diff(t_j)||_xi^p (t_j - t_{j-1}))^{1/p}` over the shared
    /// times.
    Omega,
    /// `max_{t_j >= t0} ||diff(t_j)||_xi`.
    SupCompact { t0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDistanceReport {
    pub mode: String,
    pub p: f64,
    pub xi: f64,
    pub t0: Option<f64>,
    pub value: f64,
    pub times_used: usize,
    pub bandwidth: f64,
}

/// Per-time `L^xi` distances between two flows' density estimates on the
/// shared part of their time grids. The bandwidth plan should be `Fixed`
/// when the flows carry different particle counts.
pub fn per_time_distances(
    a: &MeasureFlow,
    b: &MeasureFlow,
    xi: f64,
    spec: &DensitySpec,
) -> Result<Vec<(f64, f64)>, RegError> {
    if a.dim() != b.dim() {
        return Err(RegError::BadInput("flows live in different dimensions".into()));
    }
    let mut out = Vec::new();
    let mut kb = 0usize;
    for ja in 0..a.len() {
        let t = a.times()[ja];
        while kb < b.len() && b.times()[kb] < t - 1e-9 {
            kb += 1;
        }
        if kb >= b.len() {
            break;
        }
        if (b.times()[kb] - t).abs() > 1e-9 {
            continue;
        }
        let ga = density_grid(a, ja, spec)?;
        let gb = density_grid(b, kb, spec)?;
        out.push((t, lr_difference(&ga, &gb, xi)?));
    }
    if out.len() < 2 {
        return Err(RegError::GridMismatch);
    }
    Ok(out)
}

pub fn flow_distance(
    a: &MeasureFlow,
    b: &MeasureFlow,
    p: f64,
    xi: f64,
    mode: DistanceMode,
    spec: &DensitySpec,
) -> Result<FlowDistanceReport, RegError> {
    if !(p >= 1.0) || !(xi >= 1.0) {
        return Err(RegError::BadInput(format!(
            "need p, xi >= 1, got p = {p}, xi = {xi}"
        )));
    }
    let pairs = per_time_distances(a, b, xi, spec)?;
    let report = distance_from_pairs(&pairs, p, xi, mode)?;
    let bw = spec
        .bandwidth
        .bandwidth(a.snapshot(0), a.dim());
    Ok(FlowDistanceReport { bandwidth: bw, ..report })
}

/// The metric computations on an already-reduced (t, distance) list; kept
/// separate so analytic density families can exercise the same code.
pub fn distance_from_pairs(
    pairs: &[(f64, f64)],
    p: f64,
    xi: f64,
    mode: DistanceMode,
) -> Result<FlowDistanceReport, RegError> {
    if pairs.len() < 2 {
        return Err(RegError::GridMismatch);
    }
    match mode {
        DistanceMode::Omega => {
            let mut acc = 0.0;
            for w in pairs.windows(2) {
                let dt = w[1].0 - w[0].0;
                acc += w[1].1.powf(p) * dt;
            }
            Ok(FlowDistanceReport {
                mode: "omega".into(),
                p,
                xi,
                t0: None,
                value: acc.powf(1.0 / p),
                times_used: pairs.len(),
                bandwidth: 0.0,
            })
        }
        DistanceMode::SupCompact { t0 } => {
            let mut value = f64::NEG_INFINITY;
            let mut used = 0;
            for (t, dist) in pairs {
                if *t >= t0 {
                    value = value.max(*dist);
                    used += 1;
                }
            }
            if used == 0 {
                return Err(RegError::BadInput(format!(
                    "no shared times at or beyond t0 = {t0}"
                )));
            }
            Ok(FlowDistanceReport {
                mode: "sup_compact".into(),
                p,
                xi,
                t0: Some(t0),
                value,
                times_used: used,
                bandwidth: 0.0,
            })
        }
    }
}
