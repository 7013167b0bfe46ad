//! Martingale-problem characteristics and their Monte-Carlo diagnostics.
//!
//! For a measure flow Lambda and a test function phi, the residual
//! `M_t[phi] = Lambda_t[phi] - Lambda_0[phi] - int_0^t A_s(Lambda_s)[phi] ds`
//! should be a mean-zero martingale whose tensor quadratic variation is
//! `int Q ds + (1/n) int C ds`. This module computes the generator terms
//! pointwise, the characteristics A, Q, C as exact measure integrals, the
//! discrete residual series along simulated flows, and the z-statistic and
//! quadratic-variation checks over replication ensembles.

use std::sync::Arc;

use thiserror::Error;

use crate::coeffs::{AtomicMeasure, CoeffError, CoefficientSet, DriftSpec, MatrixField};
use crate::mollify::{Mollifier, MollifyError, SmoothingRule, DEFAULT_SMOOTHING_NODES};
use crate::particles::MeasureFlow;
use crate::spectral::{DensityGrid, SpectralError, TestFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MgError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("gridded measure unsupported here: {0}")]
    GridMeasure(&'static str),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// A measure argument for the characteristics: either an empirical atomic
/// measure or a nonnegative density grid (assumed to carry mass one).
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Atoms(AtomicMeasure<'a>),
    Grid(&'a DensityGrid),
}

impl<'a> Measure<'a> {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Atoms(mu) => mu.dim(),
            Measure::Grid(g) => g.dim(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Measure::Atoms(mu) => format!("atoms(n={})", mu.len()),
            Measure::Grid(g) => format!("grid(res={})", g.resolution()),
        }
    }
}

/// Pointwise generator data at one (t, x):
/// `l = b^delta . grad phi + (1/2) a : hess phi`, `r = sigma_bar^T grad phi`,
/// `u = sigma^T grad phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTerms {
    pub l: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

/// Like [`GeneratorTerms`] but with the drift and diffusion contributions
/// to `l` kept separate, so a deliberately corrupted compensator can scale
/// one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParts {
    pub drift_term: f64,
    pub diffusion_term: f64,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

/// One evaluation of the characteristics
/// `a_val = lambda[L phi]`, `q_val = lambda[R phi] . lambda[R psi]`,
/// `c_val = lambda[(U phi) . (U psi)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicsSample {
    pub t: f64,
    pub a_val: f64,
    pub q_val: f64,
    pub c_val: f64,
    pub phi_id: String,
    pub psi_id: String,
    pub measure: String,
}

/// Discrete residual path of one replication for one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub rep_id: u64,
    pub phi_id: String,
    /// Particle count of the underlying flow; scales the C term.
    pub n: usize,
    pub times: Vec<f64>,
    /// `M_{t_j}[phi]`; starts at exactly zero.
    pub values: Vec<f64>,
    /// `Lambda_{t_j}[phi]`, kept so bounded functionals of the flow up to
    /// a cut time can be formed without the raw particles.
    pub lambda: Vec<f64>,
    /// Trapezoid accumulation of `(Q + C/n)[phi, phi]` up to `t_j`.
    pub running_qv_predicted: Vec<f64>,
}

/// Shared machinery for one (coefficients, delta) pair.
struct Ctx<'c> {
    coeffs: &'c CoefficientSet,
    delta: f64,
    moll: Option<Mollifier>,
    rule: Option<SmoothingRule>,
}

/// Reused per-point buffers; all generator evaluations go through the same
/// routine so atomic integrals match brute-force summation bit for bit.
struct Scratch {
    grad: Vec<f64>,
    hess: Vec<f64>,
    sig: Vec<f64>,
    sigbar: Vec<f64>,
    bd: Vec<f64>,
    y: Vec<f64>,
    sample: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Scratch {
        Scratch {
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
            sig: vec![0.0; d * d],
            sigbar: vec![0.0; d * m],
            bd: vec![0.0; d],
            y: vec![0.0; d],
            sample: vec![0.0; d],
        }
    }
}

impl<'c> Ctx<'c> {
    fn new(coeffs: &'c CoefficientSet, delta: f64, nodes: usize) -> Result<Ctx<'c>, MgError> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(MgError::BadInput(format!(
                "smoothing scale must be finite and >= 0, got {delta}"
            )));
        }
        let (moll, rule) = if delta > 0.0 {
            let moll = Mollifier::new(coeffs.d, delta)?;
            let rule = moll.smoothing_rule(nodes);
            (Some(moll), Some(rule))
        } else {
            (None, None)
        };
        Ok(Ctx { coeffs, delta, moll, rule })
    }

    /// Density available to a Nemytskii drift at y: the mollified measure
    /// for delta > 0, the measure's own density for delta = 0.
    fn drift_density(&self, lam: Measure, y: &[f64]) -> Result<f64, MgError> {
        match (&self.moll, lam) {
            (Some(moll), Measure::Atoms(mu)) => Ok(moll.smooth_empirical(mu.positions(), y)?[0]),
            (Some(moll), Measure::Grid(g)) => {
                let vol = g.cell_volume();
                let mut c = vec![0.0; g.dim()];
                let mut acc = 0.0;
                for (flat, rho) in g.values().iter().enumerate() {
                    if *rho == 0.0 {
                        continue;
                    }
                    g.coords_of(flat, &mut c);
                    for (cj, yj) in c.iter_mut().zip(y) {
                        *cj = yj - *cj;
                    }
                    acc += moll.eval_unchecked(&c) * rho * vol;
                }
                Ok(acc)
            }
            (None, Measure::Atoms(_)) => Err(CoeffError::DensityRequired.into()),
            (None, Measure::Grid(g)) => g.interp(y).ok_or_else(|| {
                MgError::BadInput("evaluation point outside the density grid".into())
            }),
        }
    }

    /// Raw drift b(t, y, lambda) against either measure representation.
    fn raw_drift(&self, t: f64, y: &[f64], lam: Measure, out: &mut [f64]) -> Result<(), MgError> {
        match lam {
            Measure::Atoms(mu) => {
                let density = if self.coeffs.drift.is_nemytskii() {
                    Some(self.drift_density(lam, y)?)
                } else {
                    None
                };
                self.coeffs.drift.eval(t, y, mu, density, out)?;
            }
            Measure::Grid(g) => match &self.coeffs.drift {
                DriftSpec::Convolution { kernel, .. } => {
                    out.fill(0.0);
                    let d = g.dim();
                    let vol = g.cell_volume();
                    let mut c = vec![0.0; d];
                    let mut kv = vec![0.0; d];
                    for (flat, rho) in g.values().iter().enumerate() {
                        if *rho == 0.0 {
                            continue;
                        }
                        g.coords_of(flat, &mut c);
                        for (cj, yj) in c.iter_mut().zip(y) {
                            *cj = yj - *cj;
                        }
                        kernel(t, &c, &mut kv);
                        let w = rho * vol;
                        for (o, k) in out.iter_mut().zip(&kv) {
                            *o += w * k;
                        }
                    }
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(CoeffError::NonFinite { what: "drift" }.into());
                    }
                }
                DriftSpec::Nemytskii { b, .. } => {
                    let rho = self.drift_density(lam, y)?;
                    b(t, y, rho, out);
                    if out.iter().any(|v| !v.is_finite()) {
                        return Err(CoeffError::NonFinite { what: "drift" }.into());
                    }
                }
                DriftSpec::Custom { .. } => {
                    return Err(MgError::GridMeasure(
                        "custom drift functionals need an atomic measure",
                    ));
                }
            },
        }
        Ok(())
    }

    /// Smoothed drift `b^delta(t, x, lambda^delta)` by the quadrature rule;
    /// collapses to the raw drift at delta = 0.
    fn smoothed_drift(
        &self,
        t: f64,
        x: &[f64],
        lam: Measure,
        y: &mut [f64],
        sample: &mut [f64],
        out: &mut [f64],
    ) -> Result<(), MgError> {
        let rule = match &self.rule {
            Some(rule) => rule,
            None => return self.raw_drift(t, x, lam, out),
        };
        let d = x.len();
        out.fill(0.0);
        for (node, &w) in rule.nodes().chunks_exact(d).zip(rule.weights()) {
            for j in 0..d {
                y[j] = x[j] - self.delta * node[j];
            }
            self.raw_drift(t, y, lam, sample)?;
            for j in 0..d {
                out[j] += w * sample[j];
            }
        }
        Ok(())
    }

    /// Drift and diffusion parts of `L phi` at x, filling the scratch
    /// gradient and coefficient buffers as a side effect for R and U.
    fn parts_at(
        &self,
        t: f64,
        lam: Measure,
        phi: &TestFunction,
        x: &[f64],
        s: &mut Scratch,
    ) -> Result<(f64, f64), MgError> {
        let d = x.len();
        phi.gradient(x, &mut s.grad);
        phi.hessian(x, &mut s.hess);
        matrix_at(&self.coeffs.sigma, t, x, lam, &mut s.sig)?;
        matrix_at(&self.coeffs.sigma_bar, t, x, lam, &mut s.sigbar)?;

        let drift_term = if self.coeffs.drift.sup_bound() == 0.0 {
            0.0
        } else {
            let (y, sample, bd) = (&mut s.y, &mut s.sample, &mut s.bd);
            self.smoothed_drift(t, x, lam, y, sample, bd)?;
            bd.iter().zip(&s.grad).map(|(b, g)| b * g).sum()
        };

        let m = self.coeffs.m;
        let mut diffusion_term = 0.0;
        for j in 0..d {
            for l in 0..d {
                let mut a = 0.0;
                for k in 0..d {
                    a += s.sig[j * d + k] * s.sig[l * d + k];
                }
                for k in 0..m {
                    a += s.sigbar[j * m + k] * s.sigbar[l * m + k];
                }
                diffusion_term += 0.5 * a * s.hess[j * d + l];
            }
        }
        Ok((drift_term, diffusion_term))
    }
}

fn matrix_at(
    field: &MatrixField,
    t: f64,
    x: &[f64],
    lam: Measure,
    out: &mut [f64],
) -> Result<(), MgError> {
    match (field, lam) {
        (_, Measure::Atoms(mu)) => field.eval_into(t, x, mu, out)?,
        (MatrixField::Constant { entries, .. }, Measure::Grid(_)) => {
            if out.len() != entries.len() {
                return Err(MgError::BadInput(format!(
                    "matrix buffer holds {} entries, field has {}",
                    out.len(),
                    entries.len()
                )));
            }
            out.copy_from_slice(entries);
        }
        (MatrixField::Fn { .. }, Measure::Grid(_)) => {
            return Err(MgError::GridMeasure(
                "measure-dependent diffusion needs an atomic measure",
            ));
        }
    }
    Ok(())
}

fn check_point(lam: Measure, phi: &TestFunction, x: &[f64]) -> Result<(), MgError> {
    let d = lam.dim();
    if phi.dim() != d || x.len() != d {
        return Err(MgError::BadInput(format!(
            "dimension mismatch: measure {d}, test function {}, point {}",
            phi.dim(),
            x.len()
        )));
    }
    Ok(())
}

/// Generator data at one point; delta = 0 evaluates the unsmoothed drift.
pub fn generator_terms(
    coeffs: &CoefficientSet,
    delta: f64,
    t: f64,
    lam: Measure,
    phi: &TestFunction,
    x: &[f64],
) -> Result<GeneratorTerms, MgError> {
    let p = generator_parts(coeffs, delta, t, lam, phi, x)?;
    Ok(GeneratorTerms {
        l: p.drift_term + p.diffusion_term,
        r: p.r,
        u: p.u,
    })
}

pub fn generator_parts(
    coeffs: &CoefficientSet,
    delta: f64,
    t: f64,
    lam: Measure,
    phi: &TestFunction,
    x: &[f64],
) -> Result<GeneratorParts, MgError> {
    check_point(lam, phi, x)?;
    let ctx = Ctx::new(coeffs, delta, DEFAULT_SMOOTHING_NODES)?;
    let d = coeffs.d;
    let m = coeffs.m;
    let mut s = Scratch::new(d, m);
    let (drift_term, diffusion_term) = ctx.parts_at(t, lam, phi, x, &mut s)?;
    let mut r = vec![0.0; m];
    for (l, rl) in r.iter_mut().enumerate() {
        *rl = (0..d).map(|j| s.sigbar[j * m + l] * s.grad[j]).sum();
    }
    let mut u = vec![0.0; d];
    for (l, ul) in u.iter_mut().enumerate() {
        *ul = (0..d).map(|j| s.sig[j * d + l] * s.grad[j]).sum();
    }
    Ok(GeneratorParts {
        drift_term,
        diffusion_term,
        r,
        u,
    })
}

/// The characteristics as exact integrals against lambda: particle
/// averages for atoms, cell sums for grids. Symmetry of `q_val`, `c_val`
/// in (phi, psi) and their nonnegativity on the diagonal hold by
/// construction.
pub fn characteristics(
    coeffs: &CoefficientSet,
    delta: f64,
    t: f64,
    lam: Measure,
    phi: &TestFunction,
    psi: &TestFunction,
) -> Result<CharacteristicsSample, MgError> {
    let d = lam.dim();
    if phi.dim() != d || psi.dim() != d {
        return Err(MgError::BadInput(
            "test functions must live in the measure's dimension".into(),
        ));
    }
    let ctx = Ctx::new(coeffs, delta, DEFAULT_SMOOTHING_NODES)?;
    let acc = integrate_characteristics(&ctx, t, lam, phi, psi)?;
    Ok(CharacteristicsSample {
        t,
        a_val: acc.a,
        q_val: acc.r_phi.iter().zip(&acc.r_psi).map(|(a, b)| a * b).sum(),
        c_val: acc.c,
        phi_id: phi.id(),
        psi_id: psi.id(),
        measure: lam.describe(),
    })
}

struct CharAcc {
    a: f64,
    r_phi: Vec<f64>,
    r_psi: Vec<f64>,
    c: f64,
}

fn integrate_characteristics(
    ctx: &Ctx,
    t: f64,
    lam: Measure,
    phi: &TestFunction,
    psi: &TestFunction,
) -> Result<CharAcc, MgError> {
    let d = lam.dim();
    let m = ctx.coeffs.m;
    let same = std::ptr::eq(phi, psi);
    let mut s = Scratch::new(d, m);
    let mut grad_psi = vec![0.0; d];
    let mut a = 0.0;
    let mut r_phi = vec![0.0; m];
    let mut r_psi = vec![0.0; m];
    let mut c = 0.0;

    let mut visit = |x: &[f64], weight: f64, s: &mut Scratch| -> Result<(), MgError> {
        let (drift_term, diffusion_term) = ctx.parts_at(t, lam, phi, x, s)?;
        a += weight * (drift_term + diffusion_term);
        let gpsi: &[f64] = if same {
            &s.grad
        } else {
            psi.gradient(x, &mut grad_psi);
            &grad_psi
        };
        for l in 0..m {
            let mut rp = 0.0;
            let mut rq = 0.0;
            for j in 0..d {
                rp += s.sigbar[j * m + l] * s.grad[j];
                rq += s.sigbar[j * m + l] * gpsi[j];
            }
            r_phi[l] += weight * rp;
            r_psi[l] += weight * rq;
        }
        for l in 0..d {
            let mut up = 0.0;
            let mut uq = 0.0;
            for j in 0..d {
                up += s.sig[j * d + l] * s.grad[j];
                uq += s.sig[j * d + l] * gpsi[j];
            }
            c += weight * up * uq;
        }
        Ok(())
    };

    match lam {
        Measure::Atoms(mu) => {
            for i in 0..mu.len() {
                visit(mu.atom(i), 1.0, &mut s)?;
            }
            let inv_n = 1.0 / mu.len() as f64;
            a *= inv_n;
            c *= inv_n;
            for v in r_phi.iter_mut().chain(r_psi.iter_mut()) {
                *v *= inv_n;
            }
        }
        Measure::Grid(g) => {
            let vol = g.cell_volume();
            let mut point = vec![0.0; d];
            for (flat, rho) in g.values().iter().enumerate() {
                if *rho == 0.0 {
                    continue;
                }
                g.coords_of(flat, &mut point);
                visit(&point, rho * vol, &mut s)?;
            }
        }
    }
    Ok(CharAcc { a, r_phi, r_psi, c })
}

/// Residual series along a simulated flow with the faithful compensator.
pub fn residual_series(
    flow: &MeasureFlow,
    coeffs: &CoefficientSet,
    delta: f64,
    phi: &TestFunction,
) -> Result<ResidualSeries, MgError> {
    residual_series_with(flow, coeffs, delta, phi, 1.0, DEFAULT_SMOOTHING_NODES)
}

/// As [`residual_series`], with the drift part of A scaled by
/// `drift_scale` (power checks corrupt the compensator this way) and an
/// explicit quadrature node count, which should match the simulation's.
pub fn residual_series_with(
    flow: &MeasureFlow,
    coeffs: &CoefficientSet,
    delta: f64,
    phi: &TestFunction,
    drift_scale: f64,
    nodes: usize,
) -> Result<ResidualSeries, MgError> {
    let d = flow.dim();
    if coeffs.d != d || phi.dim() != d {
        return Err(MgError::BadInput(
            "flow, coefficients, and test function disagree on dimension".into(),
        ));
    }
    if flow.len() < 2 {
        return Err(MgError::BadInput(
            "need at least two snapshots for a residual series".into(),
        ));
    }
    if !drift_scale.is_finite() {
        return Err(MgError::BadInput("drift scale must be finite".into()));
    }
    let ctx = Ctx::new(coeffs, delta, nodes)?;
    let n = flow.particles();
    let m = coeffs.m;
    let steps = flow.len();
    let mut s = Scratch::new(d, m);

    let mut lambda = Vec::with_capacity(steps);
    let mut a_series = Vec::with_capacity(steps);
    let mut qv_integrand = Vec::with_capacity(steps);
    for j in 0..steps {
        let mu = flow.measure(j);
        let t = flow.times()[j];
        let mut lam_sum = 0.0;
        let mut a = 0.0;
        let mut r = vec![0.0; m];
        let mut c = 0.0;
        for i in 0..n {
            let x = mu.atom(i);
            lam_sum += phi.value(x);
            let (drift_term, diffusion_term) =
                ctx.parts_at(t, Measure::Atoms(mu), phi, x, &mut s)?;
            a += drift_scale * drift_term + diffusion_term;
            for l in 0..m {
                r[l] += (0..d).map(|jj| s.sigbar[jj * m + l] * s.grad[jj]).sum::<f64>();
            }
            let mut u2 = 0.0;
            for l in 0..d {
                let ul = (0..d)
                    .map(|jj| s.sig[jj * d + l] * s.grad[jj])
                    .sum::<f64>();
                u2 += ul * ul;
            }
            c += u2;
        }
        let inv_n = 1.0 / n as f64;
        lambda.push(lam_sum * inv_n);
        a_series.push(a * inv_n);
        let q: f64 = r.iter().map(|v| (v * inv_n) * (v * inv_n)).sum();
        qv_integrand.push(q + c * inv_n * inv_n);
    }

    let mut values = Vec::with_capacity(steps);
    let mut running_qv = Vec::with_capacity(steps);
    let mut compensator = 0.0;
    let mut qv = 0.0;
    values.push(0.0);
    running_qv.push(0.0);
    for j in 1..steps {
        let dt = flow.times()[j] - flow.times()[j - 1];
        compensator += a_series[j - 1] * dt;
        qv += 0.5 * (qv_integrand[j - 1] + qv_integrand[j]) * dt;
        values.push(lambda[j] - lambda[0] - compensator);
        running_qv.push(qv);
    }
    Ok(ResidualSeries {
        rep_id: flow.rep_id,
        phi_id: phi.id(),
        n,
        times: flow.times().to_vec(),
        values,
        lambda,
        running_qv_predicted: running_qv,
    })
}

/// `sup_t |M_t|` along one residual path.
pub fn residual_sup(series: &ResidualSeries) -> f64 {
    series.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// The pathwise residual bound `(2 + T c_{b,sigma,sigma_bar}) ||phi||`,
/// to be compared against [`residual_sup`] plus discretization slack.
pub fn residual_bound(coeffs: &CoefficientSet, horizon: f64, phi_seminorm2: f64) -> f64 {
    (2.0 + horizon * coeffs.residual_constant()) * phi_seminorm2
}

/// Bounded functionals of the flow up to the cut index, for
/// [`martingale_test`]; the library composes finitely many
/// `Lambda_{s}[phi]` reads with tanh, which keeps them bounded and
/// measurable at the cut.
pub type FlowFunctional = Arc<dyn Fn(&ResidualSeries, usize) -> f64 + Send + Sync>;

/// `g(omega) = tanh(Lambda_s[phi])` for the series' own phi.
pub fn tanh_of_lambda() -> FlowFunctional {
    Arc::new(|series: &ResidualSeries, cut: usize| series.lambda[cut].tanh())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub phi_id: String,
    pub s: f64,
    pub t: f64,
    pub replications: usize,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    /// `|z| <= 3`.
    pub pass: bool,
}

/// Monte-Carlo test of `E[(M_t - M_s) g(Lambda_{. and s})] = 0`.
pub fn martingale_test(
    ensemble: &[ResidualSeries],
    g: &FlowFunctional,
    s: f64,
    t: f64,
) -> Result<MartingaleReport, MgError> {
    if ensemble.len() < 2 {
        return Err(MgError::BadInput(
            "martingale test needs at least two replications".into(),
        ));
    }
    let times = &ensemble[0].times;
    let idx = |point: f64| -> Result<usize, MgError> {
        times
            .iter()
            .position(|v| (v - point).abs() <= 1e-12)
            .ok_or_else(|| MgError::BadInput(format!("time {point} is not on the stored grid")))
    };
    let (is, it) = (idx(s)?, idx(t)?);
    if is >= it {
        return Err(MgError::BadInput(format!("need s < t, got s = {s}, t = {t}")));
    }
    for series in ensemble {
        if series.times != *times {
            return Err(MgError::BadInput(
                "residual series disagree on the time grid".into(),
            ));
        }
    }
    let r = ensemble.len() as f64;
    let samples: Vec<f64> = ensemble
        .iter()
        .map(|series| (series.values[it] - series.values[is]) * g(series, is))
        .collect();
    let mean = samples.iter().sum::<f64>() / r;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0);
    let se = (var / r).sqrt();
    let z = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(mean)
    };
    Ok(MartingaleReport {
        phi_id: ensemble[0].phi_id.clone(),
        s,
        t,
        replications: ensemble.len(),
        mean,
        se,
        z,
        pass: z.abs() <= 3.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QvReport {
    pub phi_id: String,
    pub replications: usize,
    pub mean_realized: f64,
    pub mean_predicted: f64,
    /// Ensemble mean of `|realized - predicted| / predicted`.
    pub mean_relative_error: f64,
    /// Relative error within 10%.
    pub pass: bool,
}

/// Realized quadratic variation `sum (Delta M)^2` against the accumulated
/// predicted integral, per path, averaged over the ensemble.
pub fn qv_test(ensemble: &[ResidualSeries], n: usize) -> Result<QvReport, MgError> {
    if ensemble.is_empty() {
        return Err(MgError::BadInput("empty residual ensemble".into()));
    }
    if ensemble.iter().any(|series| series.n != n) {
        return Err(MgError::BadInput(
            "particle count disagrees with the residual series".into(),
        ));
    }
    let mut sum_real = 0.0;
    let mut sum_pred = 0.0;
    let mut sum_rel = 0.0;
    for series in ensemble {
        let realized: f64 = series
            .values
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum();
        let predicted = *series.running_qv_predicted.last().expect("nonempty series");
        sum_real += realized;
        sum_pred += predicted;
        sum_rel += if predicted > 0.0 {
            (realized - predicted).abs() / predicted
        } else if realized.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let r = ensemble.len() as f64;
    let mean_relative_error = sum_rel / r;
    Ok(QvReport {
        phi_id: ensemble[0].phi_id.clone(),
        replications: ensemble.len(),
        mean_realized: sum_real / r,
        mean_predicted: sum_pred / r,
        mean_relative_error,
        pass: mean_relative_error <= 0.10,
    })
}
