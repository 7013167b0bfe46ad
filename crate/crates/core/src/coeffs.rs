//! Coefficient triples (b, sigma, sigma_bar) with declared bounds, the two
//! shipped drift families, and sampled checkers for the standing
//! assumptions.
//!
//! Declared constants (sup bounds, ellipticity, Hölder data) are user
//! inputs: the checkers validate them empirically on sample plans, they do
//! not prove them. A drift over a plain atomic measure may be undefined
//! (the Nemytskii family needs a density); the smoothing layer is what
//! makes every drift evaluable inside the simulator.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::mollify::Mollifier;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("coefficient callable produced a non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("Nemytskii drift needs a density value; measure has no density source")]
    DensityRequired,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("exact W1 is implemented only in d = 1, got d = {0}")]
    UnsupportedDim(usize),
    #[error("atomic measures must balance: {left} atoms vs {right}")]
    AtomCountMismatch { left: usize, right: usize },
    #[error("{0}")]
    BadParameter(String),
}

/// Borrowed view of an equally weighted atomic measure: `n` atoms in
/// `R^d`, positions flat row-major.
#[derive(Debug, Clone, Copy)]
pub struct AtomicMeasure<'a> {
    d: usize,
    positions: &'a [f64],
}

impl<'a> AtomicMeasure<'a> {
    pub fn new(d: usize, positions: &'a [f64]) -> Result<Self, CoeffError> {
        if d == 0 {
            return Err(CoeffError::BadParameter("dimension zero".into()));
        }
        if positions.is_empty() || positions.len() % d != 0 {
            return Err(CoeffError::BadParameter(format!(
                "positions length {} is not a positive multiple of d = {d}",
                positions.len()
            )));
        }
        Ok(AtomicMeasure { d, positions })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn positions(&self) -> &'a [f64] {
        self.positions
    }

    pub fn atom(&self, i: usize) -> &'a [f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }
}

type FieldFn = dyn Fn(f64, &[f64], AtomicMeasure, &mut [f64]) + Send + Sync;
type KernelFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type NemytskiiFn = dyn Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync;

/// Drift b(t, x, mu) in one of the shipped families.
#[derive(Clone)]
pub enum DriftSpec {
    /// `b_t(x, mu) = (mu * k_t)(x)`; exact finite sum over atoms.
    Convolution {
        kernel: Arc<KernelFn>,
        sup_bound: f64,
        description: String,
    },
    /// `b_t(x, mu) = B_t(x, d mu / dx (x))`; defined only when a density
    /// value can be supplied.
    Nemytskii {
        b: Arc<NemytskiiFn>,
        sup_bound: f64,
        description: String,
    },
    /// Arbitrary measure functional, for oracles and degenerate cases.
    Custom {
        f: Arc<FieldFn>,
        sup_bound: f64,
        description: String,
    },
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DriftSpec({}, sup_bound = {})",
            self.description(),
            self.sup_bound()
        )
    }
}

/// `b_t(x, mu) := (mu * k_t)(x)` with kernel `k(t, y, out)`.
pub fn make_convolution_drift(
    kernel: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    sup_bound: f64,
    description: impl Into<String>,
) -> DriftSpec {
    assert!(sup_bound.is_finite(), "kernel sup bound must be finite");
    DriftSpec::Convolution {
        kernel: Arc::new(kernel),
        sup_bound,
        description: description.into(),
    }
}

/// `b_t(x, mu) := B(t, x, rho)` where `rho` is the measure's density at x.
pub fn make_nemytskii_drift(
    b: impl Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    sup_bound: f64,
    description: impl Into<String>,
) -> DriftSpec {
    assert!(sup_bound.is_finite(), "drift sup bound must be finite");
    DriftSpec::Nemytskii {
        b: Arc::new(b),
        sup_bound,
        description: description.into(),
    }
}

impl DriftSpec {
    pub fn zero(d: usize) -> DriftSpec {
        let _ = d;
        DriftSpec::Custom {
            f: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            sup_bound: 0.0,
            description: "zero".into(),
        }
    }

    pub fn constant(v: Vec<f64>) -> DriftSpec {
        let sup = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        assert!(sup.is_finite());
        DriftSpec::Custom {
            f: Arc::new(move |_, _, _, out: &mut [f64]| out.copy_from_slice(&v)),
            sup_bound: sup,
            description: "constant".into(),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            DriftSpec::Convolution { sup_bound, .. }
            | DriftSpec::Nemytskii { sup_bound, .. }
            | DriftSpec::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    pub fn description(&self) -> &str {
        match self {
            DriftSpec::Convolution { description, .. }
            | DriftSpec::Nemytskii { description, .. }
            | DriftSpec::Custom { description, .. } => description,
        }
    }

    pub fn is_nemytskii(&self) -> bool {
        matches!(self, DriftSpec::Nemytskii { .. })
    }

    /// Evaluate the raw (unsmoothed) drift. `density_at_x` feeds the
    /// Nemytskii family and is ignored by the others; the sum over atoms
    /// runs in storage order with a single final division, so mixtures
    /// concatenated from equal-size atom lists combine exactly.
    pub fn eval(
        &self,
        t: f64,
        x: &[f64],
        mu: AtomicMeasure,
        density_at_x: Option<f64>,
        out: &mut [f64],
    ) -> Result<(), CoeffError> {
        let d = x.len();
        if mu.dim() != d {
            return Err(CoeffError::DimMismatch {
                expected: d,
                got: mu.dim(),
            });
        }
        if out.len() != d {
            return Err(CoeffError::DimMismatch {
                expected: d,
                got: out.len(),
            });
        }
        match self {
            DriftSpec::Convolution { kernel, .. } => {
                out.fill(0.0);
                let mut shift = vec![0.0; d];
                let mut kv = vec![0.0; d];
                for i in 0..mu.len() {
                    let atom = mu.atom(i);
                    for j in 0..d {
                        shift[j] = x[j] - atom[j];
                    }
                    kernel(t, &shift, &mut kv);
                    for j in 0..d {
                        out[j] += kv[j];
                    }
                }
                let inv_n = 1.0 / mu.len() as f64;
                for o in out.iter_mut() {
                    *o *= inv_n;
                }
            }
            DriftSpec::Nemytskii { b, .. } => {
                let rho = density_at_x.ok_or(CoeffError::DensityRequired)?;
                b(t, x, rho, out);
            }
            DriftSpec::Custom { f, .. } => f(t, x, mu, out),
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CoeffError::NonFinite { what: "drift" });
        }
        Ok(())
    }
}

/// A (t, x, mu)-dependent matrix, row-major `rows x cols`.
#[derive(Clone)]
pub enum MatrixField {
    Constant { rows: usize, cols: usize, entries: Vec<f64> },
    Fn { rows: usize, cols: usize, f: Arc<FieldFn> },
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        match self {
            MatrixField::Constant { .. } => write!(f, "MatrixField::Constant({r}x{c})"),
            MatrixField::Fn { .. } => write!(f, "MatrixField::Fn({r}x{c})"),
        }
    }
}

impl MatrixField {
    pub fn constant(rows: usize, cols: usize, entries: Vec<f64>) -> MatrixField {
        assert_eq!(entries.len(), rows * cols);
        assert!(entries.iter().all(|e| e.is_finite()));
        MatrixField::Constant { rows, cols, entries }
    }

    /// Scalar multiple of the (possibly rectangular) identity.
    pub fn scalar(rows: usize, cols: usize, value: f64) -> MatrixField {
        let mut entries = vec![0.0; rows * cols];
        for i in 0..rows.min(cols) {
            entries[i * cols + i] = value;
        }
        MatrixField::constant(rows, cols, entries)
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        f: impl Fn(f64, &[f64], AtomicMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> MatrixField {
        MatrixField::Fn {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixField::Constant { rows, cols, .. } | MatrixField::Fn { rows, cols, .. } => {
                (*rows, *cols)
            }
        }
    }

    pub fn eval_into(
        &self,
        t: f64,
        x: &[f64],
        mu: AtomicMeasure,
        out: &mut [f64],
    ) -> Result<(), CoeffError> {
        let (rows, cols) = self.shape();
        if out.len() != rows * cols {
            return Err(CoeffError::DimMismatch {
                expected: rows * cols,
                got: out.len(),
            });
        }
        match self {
            MatrixField::Constant { entries, .. } => out.copy_from_slice(entries),
            MatrixField::Fn { f, .. } => {
                f(t, x, mu, out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(CoeffError::NonFinite { what: "matrix entry" });
                }
            }
        }
        Ok(())
    }
}

/// The full coefficient triple with its declared constants.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub d: usize,
    /// Number of common-noise components (columns of sigma_bar).
    pub m: usize,
    pub drift: DriftSpec,
    pub sigma: MatrixField,
    pub sigma_bar: MatrixField,
    /// Declared sup bound for |b|.
    pub b_sup: f64,
    /// Declared ellipticity constant for sigma sigma^T.
    pub kappa: f64,
    /// Declared Hölder exponent in (0, 1].
    pub beta: f64,
    /// Declared Hölder constant.
    pub hoelder_c: f64,
    /// Declared sup of the Frobenius norm of sigma (enters the residual
    /// bound constant).
    pub sigma_sup: f64,
    /// Declared sup of the Frobenius norm of sigma_bar.
    pub sigma_bar_sup: f64,
    /// Permits degenerate declarations (sigma = 0, zero bounds) for
    /// deterministic unit tests; never set in shipped scenarios.
    pub test_mode: bool,
}

impl CoefficientSet {
    /// Validate shapes and declared constants. Outside test mode the
    /// declared constants must be strictly positive.
    pub fn validated(self) -> Result<Self, CoeffError> {
        if self.d == 0 {
            return Err(CoeffError::BadParameter("dimension zero".into()));
        }
        if self.m == 0 {
            return Err(CoeffError::BadParameter(
                "need at least one common-noise component".into(),
            ));
        }
        if self.sigma.shape() != (self.d, self.d) {
            return Err(CoeffError::BadParameter(format!(
                "sigma must be {d}x{d}, got {:?}",
                self.sigma.shape(),
                d = self.d
            )));
        }
        if self.sigma_bar.shape() != (self.d, self.m) {
            return Err(CoeffError::BadParameter(format!(
                "sigma_bar must be {d}x{m}, got {:?}",
                self.sigma_bar.shape(),
                d = self.d,
                m = self.m
            )));
        }
        for (name, v) in [
            ("b_sup", self.b_sup),
            ("kappa", self.kappa),
            ("beta", self.beta),
            ("hoelder_c", self.hoelder_c),
            ("sigma_sup", self.sigma_sup),
            ("sigma_bar_sup", self.sigma_bar_sup),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoeffError::BadParameter(format!(
                    "declared {name} must be finite and nonnegative, got {v}"
                )));
            }
            if !self.test_mode && v == 0.0 && (name == "kappa" || name == "beta" || name == "hoelder_c")
            {
                return Err(CoeffError::BadParameter(format!(
                    "declared {name} must be strictly positive outside test mode"
                )));
            }
        }
        if self.beta > 1.0 {
            return Err(CoeffError::BadParameter(format!(
                "Hölder exponent must lie in (0, 1], got {}",
                self.beta
            )));
        }
        Ok(self)
    }

    /// `a = sigma sigma^T + sigma_bar sigma_bar^T` at (t, x, mu), row-major
    /// d x d into `out`.
    pub fn diffusion_matrix(
        &self,
        t: f64,
        x: &[f64],
        mu: AtomicMeasure,
        out: &mut [f64],
    ) -> Result<(), CoeffError> {
        let d = self.d;
        if out.len() != d * d {
            return Err(CoeffError::DimMismatch {
                expected: d * d,
                got: out.len(),
            });
        }
        let mut s = vec![0.0; d * d];
        let mut sb = vec![0.0; d * self.m];
        self.sigma.eval_into(t, x, mu, &mut s)?;
        self.sigma_bar.eval_into(t, x, mu, &mut sb)?;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += s[i * d + l] * s[j * d + l];
                }
                for l in 0..self.m {
                    acc += sb[i * self.m + l] * sb[j * self.m + l];
                }
                out[i * d + j] = acc;
            }
        }
        Ok(())
    }

    /// The constant `c = b_sup + (sigma_sup^2 + sigma_bar_sup^2) / 2`
    /// entering the pathwise residual bound.
    pub fn residual_constant(&self) -> f64 {
        self.b_sup + 0.5 * (self.sigma_sup * self.sigma_sup + self.sigma_bar_sup * self.sigma_bar_sup)
    }
}

/// Exact 1-d Kantorovich-Rubinstein distance between equally weighted atom
/// lists of equal size: sorted coupling, `(1/n) sum |x_(i) - y_(i)|`.
pub fn w1_distance_1d(mu: &[f64], nu: &[f64]) -> Result<f64, CoeffError> {
    if mu.len() != nu.len() {
        return Err(CoeffError::AtomCountMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    if mu.is_empty() {
        return Err(CoeffError::BadParameter("empty measures".into()));
    }
    if mu.iter().chain(nu).any(|v| !v.is_finite()) {
        return Err(CoeffError::BadParameter("non-finite atom".into()));
    }
    let mut a = mu.to_vec();
    let mut b = nu.to_vec();
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    b.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// One comparison instance for the assumption checker. `mu`/`mu2` are flat
/// atom arrays (d = 1 when they differ).
#[derive(Debug, Clone)]
pub struct AssumptionSample {
    pub t: f64,
    pub t2: f64,
    pub x: Vec<f64>,
    pub x2: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu2: Vec<f64>,
    /// Direction for the ellipticity quotient; zero vector skips it.
    pub z: Vec<f64>,
}

/// Sampled verdicts for the standing assumptions. Observed quantities are
/// included so a failure is diagnosable.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub min_ellipticity: f64,
    pub ellipticity_pass: bool,
    pub max_sigma_ratio: f64,
    pub sigma_hoelder_pass: bool,
    pub max_sigma_bar_ratio: f64,
    pub sigma_bar_hoelder_pass: bool,
    pub sup_drift: f64,
    pub drift_pass: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.ellipticity_pass
            && self.sigma_hoelder_pass
            && self.sigma_bar_hoelder_pass
            && self.drift_pass
    }
}

fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Check ellipticity, the two Hölder conditions, and the drift bound on a
/// sample plan. The time increment enters only the sigma_bar condition,
/// matching the stated assumptions. `density_delta` supplies the smoothing
/// scale for Nemytskii drift evaluation.
pub fn verify_assumptions(
    coeffs: &CoefficientSet,
    samples: &[AssumptionSample],
    density_delta: Option<f64>,
) -> Result<AssumptionReport, CoeffError> {
    if samples.is_empty() {
        return Err(CoeffError::BadParameter("empty sample plan".into()));
    }
    let d = coeffs.d;
    let needs_w1 = samples.iter().any(|s| s.mu != s.mu2);
    if needs_w1 && d != 1 {
        return Err(CoeffError::UnsupportedDim(d));
    }
    let moll = match density_delta {
        Some(delta) => {
            Some(Mollifier::new(d, delta).map_err(|e| CoeffError::BadParameter(e.to_string()))?)
        }
        None => None,
    };

    let mut min_ellipticity = f64::INFINITY;
    let mut saw_direction = false;
    let mut max_sigma_ratio = 0.0f64;
    let mut max_sigma_bar_ratio = 0.0f64;
    let mut sup_drift = 0.0f64;

    let mut s1 = vec![0.0; d * d];
    let mut s2 = vec![0.0; d * d];
    let mut sb1 = vec![0.0; d * coeffs.m];
    let mut sb2 = vec![0.0; d * coeffs.m];
    let mut bv = vec![0.0; d];

    for sample in samples {
        let mu = AtomicMeasure::new(d, &sample.mu)?;
        let mu2 = AtomicMeasure::new(d, &sample.mu2)?;

        // (i) ellipticity: z^T sigma sigma^T z / |z|^2 at (t, x, mu).
        let z2: f64 = sample.z.iter().map(|v| v * v).sum();
        if z2 > 0.0 {
            saw_direction = true;
            coeffs.sigma.eval_into(sample.t, &sample.x, mu, &mut s1)?;
            // |sigma^T z|^2 = z^T sigma sigma^T z.
            let mut quad = 0.0;
            for l in 0..d {
                let mut col = 0.0;
                for i in 0..d {
                    col += s1[i * d + l] * sample.z[i];
                }
                quad += col * col;
            }
            min_ellipticity = min_ellipticity.min(quad / z2);
        }

        // (ii) Hölder quotients against |x - x'|^beta + W1^beta (+ time
        // term for sigma_bar only).
        let w1 = if sample.mu == sample.mu2 {
            0.0
        } else {
            w1_distance_1d(&sample.mu, &sample.mu2)?
        };
        let space = euclid(&sample.x, &sample.x2);
        let beta = coeffs.beta;
        let denom_sigma = space.powf(beta) + w1.powf(beta);
        if denom_sigma > 0.0 {
            coeffs.sigma.eval_into(sample.t, &sample.x, mu, &mut s1)?;
            coeffs.sigma.eval_into(sample.t, &sample.x2, mu2, &mut s2)?;
            max_sigma_ratio = max_sigma_ratio.max(frobenius_diff(&s1, &s2) / denom_sigma);
        }
        let denom_bar = (sample.t - sample.t2).abs().powf(beta) + denom_sigma;
        if denom_bar > 0.0 {
            coeffs.sigma_bar.eval_into(sample.t, &sample.x, mu, &mut sb1)?;
            coeffs
                .sigma_bar
                .eval_into(sample.t2, &sample.x2, mu2, &mut sb2)?;
            max_sigma_bar_ratio = max_sigma_bar_ratio.max(frobenius_diff(&sb1, &sb2) / denom_bar);
        }

        // (iii) drift sup.
        let density = match (&coeffs.drift, &moll) {
            (DriftSpec::Nemytskii { .. }, Some(m)) => Some(
                m.smooth_empirical(&sample.mu, &sample.x)
                    .map_err(|e| CoeffError::BadParameter(e.to_string()))?[0],
            ),
            (DriftSpec::Nemytskii { .. }, None) => return Err(CoeffError::DensityRequired),
            _ => None,
        };
        coeffs.drift.eval(sample.t, &sample.x, mu, density, &mut bv)?;
        sup_drift = sup_drift.max(bv.iter().map(|v| v * v).sum::<f64>().sqrt());
    }

    if !saw_direction {
        min_ellipticity = 0.0;
    }
    Ok(AssumptionReport {
        min_ellipticity,
        ellipticity_pass: saw_direction && min_ellipticity >= coeffs.kappa - 1e-12,
        max_sigma_ratio,
        sigma_hoelder_pass: max_sigma_ratio <= coeffs.hoelder_c + 1e-12,
        max_sigma_bar_ratio,
        sigma_bar_hoelder_pass: max_sigma_bar_ratio <= coeffs.hoelder_c + 1e-12,
        sup_drift,
        drift_pass: sup_drift <= coeffs.b_sup + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn unit_coeffs(d: usize, drift: DriftSpec) -> CoefficientSet {
        CoefficientSet {
            d,
            m: 1,
            drift,
            sigma: MatrixField::scalar(d, d, 1.0),
            sigma_bar: MatrixField::scalar(d, 1, 0.5),
            b_sup: 1.0,
            kappa: 1.0,
            beta: 1.0,
            hoelder_c: 1.0,
            sigma_sup: (d as f64).sqrt(),
            sigma_bar_sup: 0.5,
            test_mode: false,
        }
    }

    #[test]
    fn convolution_with_a_point_mass_recovers_the_kernel() {
        let moll = Mollifier::new(1, 1.0).unwrap();
        let profile = moll.clone();
        let drift = make_convolution_drift(
            move |_t, y, out: &mut [f64]| out[0] = profile.eval_unchecked(y),
            1.0,
            "mollifier kernel",
        );
        let atoms = [0.0];
        let mu = AtomicMeasure::new(1, &atoms).unwrap();
        let mut out = [0.0];
        for x in [-0.7, 0.0, 0.4, 2.0] {
            drift.eval(0.0, &[x], mu, None, &mut out).unwrap();
            assert_eq!(out[0], moll.eval_unchecked(&[x]));
        }
    }

    #[test]
    fn antisymmetric_kernel_cancels_on_symmetric_atoms() {
        let drift = make_convolution_drift(
            |_t, y, out: &mut [f64]| out[0] = if y[0].abs() <= 2.0 { y[0] } else { 0.0 },
            2.0,
            "windowed identity",
        );
        let atoms = [-1.0, 1.0];
        let mu = AtomicMeasure::new(1, &atoms).unwrap();
        let mut out = [f64::NAN];
        drift.eval(0.0, &[0.0], mu, None, &mut out).unwrap();
        assert_eq!(out[0], 0.0);
    }

    /// Mixtures assembled by concatenating equal-size atom lists combine
    /// the two drifts exactly; dyadic inputs keep every intermediate sum
    /// representable, so the comparison can be bitwise.
    #[test]
    fn convolution_is_linear_in_atomic_mixtures() {
        let drift = make_convolution_drift(
            |_t, y, out: &mut [f64]| out[0] = if y[0].abs() <= 2.0 { y[0] } else { 0.0 },
            2.0,
            "windowed identity",
        );
        let mu_atoms = [-1.0, -0.5, 0.25, 0.75];
        let nu_atoms = [-0.75, 0.125, 0.5, 1.0];
        let mut mix_atoms = Vec::from(mu_atoms);
        mix_atoms.extend_from_slice(&nu_atoms);
        let mut b_mu = [0.0];
        let mut b_nu = [0.0];
        let mut b_mix = [0.0];
        for x in [0.0, 0.25, -0.5] {
            drift
                .eval(0.0, &[x], AtomicMeasure::new(1, &mu_atoms).unwrap(), None, &mut b_mu)
                .unwrap();
            drift
                .eval(0.0, &[x], AtomicMeasure::new(1, &nu_atoms).unwrap(), None, &mut b_nu)
                .unwrap();
            drift
                .eval(0.0, &[x], AtomicMeasure::new(1, &mix_atoms).unwrap(), None, &mut b_mix)
                .unwrap();
            assert_eq!(b_mix[0], 0.5 * b_mu[0] + 0.5 * b_nu[0]);
        }
    }

    #[test]
    fn shipped_drifts_respect_their_declared_bounds() {
        let conv = make_convolution_drift(
            |t, y, out: &mut [f64]| out[0] = (y[0] + 0.3 * t).tanh(),
            1.0,
            "tanh kernel",
        );
        let nem = make_nemytskii_drift(
            |_t, _x, rho, out: &mut [f64]| out[0] = rho.atan(),
            std::f64::consts::FRAC_PI_2,
            "arctan of density",
        );
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let mut out = [0.0];
        for _ in 0..10_000 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let x = [rng.gen_range(-5.0..5.0)];
            let atoms: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mu = AtomicMeasure::new(1, &atoms).unwrap();
            conv.eval(t, &x, mu, None, &mut out).unwrap();
            assert!(out[0].abs() <= conv.sup_bound());
            let rho = rng.gen_range(0.0..50.0);
            nem.eval(t, &x, mu, Some(rho), &mut out).unwrap();
            assert!(out[0].abs() <= nem.sup_bound());
        }
    }

    #[test]
    fn nemytskii_on_a_constant_density_is_the_pointwise_map() {
        let drift = make_nemytskii_drift(
            |_t, _x, rho, out: &mut [f64]| out[0] = rho.atan(),
            std::f64::consts::FRAC_PI_2,
            "arctan of density",
        );
        let atoms = [0.3, 1.7];
        let mu = AtomicMeasure::new(1, &atoms).unwrap();
        let mut out = [0.0];
        drift.eval(0.0, &[1.0], mu, Some(0.5), &mut out).unwrap();
        assert_eq!(out[0], 0.5f64.atan());
    }

    #[test]
    fn nemytskii_without_a_density_is_an_error() {
        let drift =
            make_nemytskii_drift(|_t, _x, rho, out: &mut [f64]| out[0] = rho.min(1.0), 1.0, "capped");
        let atoms = [0.0];
        let mu = AtomicMeasure::new(1, &atoms).unwrap();
        let mut out = [0.0];
        assert_eq!(
            drift.eval(0.0, &[0.0], mu, None, &mut out),
            Err(CoeffError::DensityRequired)
        );
    }

    /// Single smoothed particle at the origin: the density at 0 is the
    /// mollifier's center value, so B = min(rho, 1) returns exactly that.
    #[test]
    fn nemytskii_sees_the_smoothed_single_particle_density() {
        let drift =
            make_nemytskii_drift(|_t, _x, rho, out: &mut [f64]| out[0] = rho.min(1.0), 1.0, "capped");
        let moll = Mollifier::new(1, 1.0).unwrap();
        let atoms = [0.0];
        let rho = moll.smooth_empirical(&atoms, &[0.0]).unwrap()[0];
        let mu = AtomicMeasure::new(1, &atoms).unwrap();
        let mut out = [0.0];
        drift.eval(0.0, &[0.0], mu, Some(rho), &mut out).unwrap();
        assert_eq!(out[0], rho.min(1.0));
        assert!(rho < 1.0, "unit-scale bump peaks below one, got {rho}");
    }

    /// Two measures with the same density value at x produce the same
    /// drift no matter how different the atoms are.
    #[test]
    fn nemytskii_depends_on_the_measure_only_through_the_density() {
        let drift = make_nemytskii_drift(
            |_t, x, rho, out: &mut [f64]| out[0] = (x[0] + rho).sin(),
            1.0,
            "sin(x + rho)",
        );
        let a = [0.0, 1.0, 2.0];
        let b = [-5.0, 5.0, 9.0];
        let mut out_a = [0.0];
        let mut out_b = [0.0];
        drift
            .eval(0.2, &[0.4], AtomicMeasure::new(1, &a).unwrap(), Some(0.7), &mut out_a)
            .unwrap();
        drift
            .eval(0.2, &[0.4], AtomicMeasure::new(1, &b).unwrap(), Some(0.7), &mut out_b)
            .unwrap();
        assert_eq!(out_a, out_b);
    }

    #[test]
    fn w1_matches_hand_values() {
        assert_eq!(w1_distance_1d(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(w1_distance_1d(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(w1_distance_1d(&[0.3, -0.9], &[-0.9, 0.3]).unwrap(), 0.0);
        assert_eq!(
            w1_distance_1d(&[0.0], &[0.0, 1.0]),
            Err(CoeffError::AtomCountMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn w1_is_a_metric_on_random_triples() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let sample = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
                (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect()
            };
            let a = sample(&mut rng);
            let b = sample(&mut rng);
            let c = sample(&mut rng);
            let dab = w1_distance_1d(&a, &b).unwrap();
            let dba = w1_distance_1d(&b, &a).unwrap();
            let dac = w1_distance_1d(&a, &c).unwrap();
            let dcb = w1_distance_1d(&c, &b).unwrap();
            assert!(dab >= 0.0);
            assert!((dab - dba).abs() <= 1e-12);
            assert!(dab <= dac + dcb + 1e-12);
            assert_eq!(w1_distance_1d(&a, &a).unwrap(), 0.0);
        }
    }

    fn plain_samples(d: usize, count: usize, seed: u64) -> Vec<AssumptionSample> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let point = |rng: &mut rand_chacha::ChaCha12Rng| -> Vec<f64> {
                    (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()
                };
                let atoms: Vec<f64> = (0..4 * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let atoms2: Vec<f64> = if d == 1 {
                    (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()
                } else {
                    atoms.clone()
                };
                AssumptionSample {
                    t: rng.gen_range(0.0..1.0),
                    t2: rng.gen_range(0.0..1.0),
                    x: point(&mut rng),
                    x2: point(&mut rng),
                    mu: atoms,
                    mu2: atoms2,
                    z: point(&mut rng),
                }
            })
            .collect()
    }

    #[test]
    fn identity_sigma_passes_ellipticity_with_kappa_one() {
        let coeffs = unit_coeffs(1, DriftSpec::zero(1)).validated().unwrap();
        let report = verify_assumptions(&coeffs, &plain_samples(1, 50, 3), None).unwrap();
        assert!(report.ellipticity_pass);
        assert!((report.min_ellipticity - 1.0).abs() < 1e-12);
        assert!(report.drift_pass);
        assert!(report.all_pass());
    }

    #[test]
    fn vanishing_sigma_fails_ellipticity() {
        let mut coeffs = unit_coeffs(1, DriftSpec::zero(1));
        coeffs.sigma = MatrixField::scalar(1, 1, 0.0);
        coeffs.kappa = 0.1;
        coeffs.test_mode = true;
        let coeffs = coeffs.validated().unwrap();
        let report = verify_assumptions(&coeffs, &plain_samples(1, 50, 4), None).unwrap();
        assert!(!report.ellipticity_pass);
        assert_eq!(report.min_ellipticity, 0.0);
    }

    /// sigma(x) = (1 + x^2)^{-1} has Lipschitz constant 3 sqrt(3) / 8
    /// (attained at x = 1/sqrt(3)), comfortably below a declared C = 0.8.
    #[test]
    fn smooth_sigma_passes_the_hoelder_check() {
        let mut coeffs = unit_coeffs(1, DriftSpec::zero(1));
        coeffs.sigma = MatrixField::from_fn(1, 1, |_t, x, _mu, out| {
            out[0] = 1.0 / (1.0 + x[0] * x[0]);
        });
        coeffs.hoelder_c = 0.8;
        coeffs.kappa = 0.005;
        let coeffs = coeffs.validated().unwrap();
        let report = verify_assumptions(&coeffs, &plain_samples(1, 400, 5), None).unwrap();
        assert!(report.sigma_hoelder_pass, "ratio {}", report.max_sigma_ratio);
        assert!(report.max_sigma_ratio <= 3.0 * 3.0f64.sqrt() / 8.0 + 1e-9);
        assert!(report.max_sigma_ratio > 0.1, "sampling should see variation");
    }

    #[test]
    fn measure_hoelder_checks_require_dimension_one() {
        let coeffs = unit_coeffs(2, DriftSpec::zero(2)).validated().unwrap();
        let mut samples = plain_samples(2, 10, 6);
        samples[0].mu2 = vec![9.0; samples[0].mu.len()];
        assert_eq!(
            verify_assumptions(&coeffs, &samples, None),
            Err(CoeffError::UnsupportedDim(2))
        );
    }

    #[test]
    fn validation_rejects_bad_declarations() {
        let mut coeffs = unit_coeffs(1, DriftSpec::zero(1));
        coeffs.beta = 1.5;
        assert!(coeffs.clone().validated().is_err());
        coeffs.beta = 1.0;
        coeffs.kappa = 0.0;
        assert!(coeffs.clone().validated().is_err());
        coeffs.test_mode = true;
        assert!(coeffs.validated().is_ok());
    }

    #[test]
    fn diffusion_matrix_adds_both_noise_channels() {
        let coeffs = CoefficientSet {
            d: 2,
            m: 1,
            drift: DriftSpec::zero(2),
            sigma: MatrixField::constant(2, 2, vec![1.0, 0.0, 0.0, 2.0]),
            sigma_bar: MatrixField::constant(2, 1, vec![1.0, 0.0]),
            b_sup: 0.0,
            kappa: 1.0,
            beta: 1.0,
            hoelder_c: 1.0,
            sigma_sup: 5.0f64.sqrt(),
            sigma_bar_sup: 1.0,
            test_mode: true,
        }
        .validated()
        .unwrap();
        let atoms = [0.0, 0.0];
        let mu = AtomicMeasure::new(2, &atoms).unwrap();
        let mut a = [0.0; 4];
        coeffs.diffusion_matrix(0.0, &[0.0, 0.0], mu, &mut a).unwrap();
        assert_eq!(a, [2.0, 0.0, 0.0, 4.0]);
        // sqrt(5)^2 rounds one ulp above 5, so compare with slack.
        assert!((coeffs.residual_constant() - 3.0).abs() < 1e-12);
    }
}
