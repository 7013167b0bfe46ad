//! Compactly supported mollifier and everything it smooths.
//!
//! The kernel family is `h_delta(x) = delta^{-d} h(x / delta)` where `h` is
//! the standard bump `c_d * exp(-1 / (1 - |x|^2))` on the open unit ball,
//! extended by zero, with `c_d` chosen so `h` integrates to one. Shrinking
//! `delta` therefore concentrates mass toward the origin while keeping total
//! mass exactly one, which is what every downstream consumer (smoothed
//! empirical measures, smoothed drifts, kernel density estimates) relies on.
//!
//! Two operations live here:
//! - [`Mollifier::smooth_empirical`]: the kernel-smoothed empirical measure
//!   of an atom cloud, `(1/n) sum_i h_delta(X_i - x)`.
//! - [`Mollifier::smooth_drift`]: the convolution of a bounded field with
//!   `h_delta`, evaluated by a fixed quadrature rule on the support ball.
//!
//! The drift quadrature uses *normalized* weights (they sum to one exactly),
//! so the smoothed field is a convex combination of raw-field samples. That
//! makes the sup-norm contraction of smoothing hold exactly in floating
//! point, not just up to quadrature error.

use std::sync::OnceLock;

use thiserror::Error;

/// Scales below this are rejected: the quadrature rules fix their node count
/// per support ball, and extreme scale separation only amplifies rounding in
/// the `delta^{-d}` prefactor without any modelling benefit.
pub const MIN_DELTA: f64 = 1e-8;

/// Default quadrature nodes per axis for drift smoothing.
pub const DEFAULT_SMOOTHING_NODES: usize = 64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MollifyError {
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("mollifier scale must be finite and in [{MIN_DELTA}, inf), got {0}")]
    BadDelta(f64),
    #[error("point dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate in input")]
    NonFiniteInput,
    #[error("empty particle set")]
    EmptyParticles,
    #[error("field sample was non-finite at quadrature point {location:?}")]
    NonFiniteSample { location: Vec<f64> },
}

/// Unnormalized bump profile as a function of squared radius, `|x|^2 < 1`.
#[inline]
fn bump_sq(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Adaptive Simpson on `[a, b]`, standard halving with error estimate
/// `(s_left + s_right - s_whole) / 15`.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let simpson = |lo: f64, hi: f64| {
        let mid = 0.5 * (lo + hi);
        (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi))
    };
    let whole = simpson(a, b);
    let left = simpson(a, m);
    let right = simpson(m, b);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        adaptive_simpson(f, a, m, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, 0.5 * tol, depth - 1)
    }
}

/// Surface area of the unit sphere in `R^d` (the boundary of the unit ball),
/// via the half-integer Gamma recurrence.
fn unit_sphere_area(d: usize) -> f64 {
    // S_{d-1} = 2 pi^{d/2} / Gamma(d/2).
    let half = d as f64 / 2.0;
    let mut gamma = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut arg = if d % 2 == 0 { 1.0 } else { 0.5 };
    while arg + 1e-9 < half {
        gamma *= arg;
        arg += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(half) / gamma
}

/// Mass of the unnormalized bump over the unit ball in `R^d`, computed once
/// per dimension by radial reduction and adaptive Simpson.
fn unit_bump_mass(d: usize) -> f64 {
    static CACHE: [OnceLock<f64>; 8] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    let compute = || {
        let radial = |r: f64| r.powi(d as i32 - 1) * bump_sq(r * r);
        unit_sphere_area(d) * adaptive_simpson(&radial, 0.0, 1.0, 1e-14, 40)
    };
    if d >= 1 && d <= CACHE.len() {
        *CACHE[d - 1].get_or_init(compute)
    } else {
        compute()
    }
}

/// The scaled bump kernel `h_delta` in dimension `d`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    d: usize,
    delta: f64,
    norm_const: f64,
}

impl Mollifier {
    pub fn new(d: usize, delta: f64) -> Result<Self, MollifyError> {
        if d == 0 {
            return Err(MollifyError::ZeroDim);
        }
        if !delta.is_finite() || delta < MIN_DELTA {
            return Err(MollifyError::BadDelta(delta));
        }
        Ok(Self {
            d,
            delta,
            norm_const: 1.0 / unit_bump_mass(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `h_delta` vanishes outside the closed ball of this radius.
    pub fn support_radius(&self) -> f64 {
        self.delta
    }

    /// Normalization constant of the *unit-scale* profile: `h(x) =
    /// norm_const * exp(-1/(1-|x|^2))` on the unit ball.
    pub fn norm_const(&self) -> f64 {
        self.norm_const
    }

    /// `h_delta(x)`, checking dimension and finiteness.
    pub fn eval(&self, x: &[f64]) -> Result<f64, MollifyError> {
        if x.len() != self.d {
            return Err(MollifyError::DimMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(MollifyError::NonFiniteInput);
        }
        Ok(self.eval_unchecked(x))
    }

    /// `h_delta(x)` without input validation; callers guarantee `x` is finite
    /// with the right dimension.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for c in x {
            let u = c / self.delta;
            r2 += u * u;
        }
        self.eval_unit_r2(r2)
    }

    /// `h_delta` expressed through the squared radius in kernel units,
    /// `r2 = |x/delta|^2`. This is the innermost call of density estimation,
    /// where the caller has already reduced a point difference to `r2`.
    #[inline]
    pub fn eval_unit_r2(&self, r2: f64) -> f64 {
        self.norm_const * bump_sq(r2) / self.delta.powi(self.d as i32)
    }

    /// Smoothed empirical measure of `positions` (flat `n x d`, row per
    /// particle) at each of `queries` (flat `q x d`):
    /// `(1/n) sum_i h_delta(X_i - x)`.
    pub fn smooth_empirical(
        &self,
        positions: &[f64],
        queries: &[f64],
    ) -> Result<Vec<f64>, MollifyError> {
        if positions.is_empty() {
            return Err(MollifyError::EmptyParticles);
        }
        if positions.len() % self.d != 0 || queries.len() % self.d != 0 {
            return Err(MollifyError::DimMismatch {
                expected: self.d,
                got: positions.len() % self.d,
            });
        }
        if positions.iter().chain(queries.iter()).any(|c| !c.is_finite()) {
            return Err(MollifyError::NonFiniteInput);
        }
        let n = positions.len() / self.d;
        let inv_n = 1.0 / n as f64;
        let inv_d2 = 1.0 / (self.delta * self.delta);
        let mut out = Vec::with_capacity(queries.len() / self.d);
        for q in queries.chunks_exact(self.d) {
            let mut acc = 0.0;
            for p in positions.chunks_exact(self.d) {
                let mut r2 = 0.0;
                for (a, b) in p.iter().zip(q) {
                    let diff = a - b;
                    r2 += diff * diff;
                }
                acc += self.eval_unit_r2(r2 * inv_d2);
            }
            out.push(acc * inv_n);
        }
        Ok(out)
    }

    /// Quadrature rule on this kernel's support ball, reusable across many
    /// smoothing calls at the same dimension.
    pub fn smoothing_rule(&self, nodes_per_axis: usize) -> SmoothingRule {
        SmoothingRule::new(self.d, nodes_per_axis)
    }

    /// Convolution of a vector field with `h_delta` at the point `x`:
    /// `(f * h_delta)(x) = integral of f(x - delta u) h(u) du` over the unit
    /// ball, evaluated with the rule's normalized weights. Any time or
    /// measure dependence of the field is bound into the closure by the
    /// caller.
    ///
    /// Because the weights form a convex combination, the output never
    /// exceeds the componentwise sup of the sampled field values.
    pub fn smooth_drift<F>(
        &self,
        field: F,
        x: &[f64],
        rule: &SmoothingRule,
        out: &mut [f64],
    ) -> Result<(), MollifyError>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        if x.len() != self.d {
            return Err(MollifyError::DimMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(MollifyError::NonFiniteInput);
        }
        debug_assert_eq!(rule.d, self.d);
        out.fill(0.0);
        let mut y = vec![0.0; self.d];
        let mut sample = vec![0.0; out.len()];
        for (node, &w) in rule.nodes.chunks_exact(self.d).zip(&rule.weights) {
            for (yi, (xi, ui)) in y.iter_mut().zip(x.iter().zip(node)) {
                *yi = xi - self.delta * ui;
            }
            field(&y, &mut sample);
            if sample.iter().any(|v| !v.is_finite()) {
                return Err(MollifyError::NonFiniteSample { location: y });
            }
            for (o, s) in out.iter_mut().zip(&sample) {
                *o += w * s;
            }
        }
        Ok(())
    }
}

/// Midpoint nodes on the unit ball with bump-proportional weights,
/// renormalized to sum to one.
///
/// The node set is symmetric under `u -> -u` and the weights depend only on
/// `|u|`, so smoothing preserves even/odd symmetry of the field exactly.
#[derive(Debug, Clone)]
pub struct SmoothingRule {
    d: usize,
    /// Flat `k x d` node coordinates in the unit ball.
    nodes: Vec<f64>,
    /// Convex weights, same length as node count.
    weights: Vec<f64>,
}

impl SmoothingRule {
    pub fn new(d: usize, nodes_per_axis: usize) -> Self {
        let n = nodes_per_axis.max(2);
        let step = 2.0 / n as f64;
        let axis: Vec<f64> = (0..n).map(|j| -1.0 + (j as f64 + 0.5) * step).collect();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            let mut r2 = 0.0;
            for &i in &idx {
                r2 += axis[i] * axis[i];
            }
            let w = bump_sq(r2);
            if w > 0.0 {
                for &i in &idx {
                    nodes.push(axis[i]);
                }
                weights.push(w);
            }
            // Odometer over the d-fold tensor grid.
            let mut k = 0;
            loop {
                if k == d {
                    let total: f64 = weights.iter().sum();
                    for w in &mut weights {
                        *w /= total;
                    }
                    return Self { d, nodes, weights };
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}
