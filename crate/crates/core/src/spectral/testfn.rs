//! Test functions with analytic value, gradient, and Hessian.
//!
//! Everything a generator or pairing needs from a test function is one of
//! three callables, so the families are a closed enum rather than a trait:
//! that keeps them cloneable, hashable into report ids, and cheap to ship
//! across threads.

use super::hermite;

/// Smooth rapidly decaying test function on `R^d`.
#[derive(Debug, Clone)]
pub enum TestFunction {
    /// Product Hermite function labelled by a 1-based multi-index.
    Hermite { k: Vec<usize> },
    /// `exp(-|x - center|^2 / (2 width^2))`; peak value one, no
    /// normalization.
    GaussianBump { center: Vec<f64>, width: f64 },
    /// `exp(-1 / (1 - |u|^2))` with `u = (x - center) / radius`, zero
    /// outside the closed ball. Peak value `e^{-1}`.
    CompactBump { center: Vec<f64>, radius: f64 },
    /// `a * f`.
    Scale { a: f64, f: Box<TestFunction> },
    /// `f + g`.
    Sum { f: Box<TestFunction>, g: Box<TestFunction> },
    /// `f * g` (pointwise).
    Product { f: Box<TestFunction>, g: Box<TestFunction> },
}

impl TestFunction {
    pub fn gaussian_bump(center: &[f64], width: f64) -> Self {
        assert!(width > 0.0, "bump width must be positive");
        TestFunction::GaussianBump {
            center: center.to_vec(),
            width,
        }
    }

    pub fn compact_bump(center: &[f64], radius: f64) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        TestFunction::CompactBump {
            center: center.to_vec(),
            radius,
        }
    }

    pub fn hermite(k: &[usize]) -> Self {
        assert!(!k.is_empty() && k.iter().all(|&ki| ki >= 1));
        TestFunction::Hermite { k: k.to_vec() }
    }

    pub fn scaled(self, a: f64) -> Self {
        TestFunction::Scale {
            a,
            f: Box::new(self),
        }
    }

    pub fn plus(self, g: TestFunction) -> Self {
        TestFunction::Sum {
            f: Box::new(self),
            g: Box::new(g),
        }
    }

    pub fn times(self, g: TestFunction) -> Self {
        TestFunction::Product {
            f: Box::new(self),
            g: Box::new(g),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Hermite { k } => k.len(),
            TestFunction::GaussianBump { center, .. } => center.len(),
            TestFunction::CompactBump { center, .. } => center.len(),
            TestFunction::Scale { f, .. } => f.dim(),
            TestFunction::Sum { f, .. } => f.dim(),
            TestFunction::Product { f, .. } => f.dim(),
        }
    }

    /// Short stable descriptor for report rows.
    pub fn id(&self) -> String {
        match self {
            TestFunction::Hermite { k } => {
                let parts: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                format!("hermite[{}]", parts.join(","))
            }
            TestFunction::GaussianBump { center, width } => {
                format!("gbump(c={center:?},w={width})")
            }
            TestFunction::CompactBump { center, radius } => {
                format!("cbump(c={center:?},r={radius})")
            }
            TestFunction::Scale { a, f } => format!("{a}*{}", f.id()),
            TestFunction::Sum { f, g } => format!("({}+{})", f.id(), g.id()),
            TestFunction::Product { f, g } => format!("({}*{})", f.id(), g.id()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Hermite { k } => hermite::eval_multi(k, x).expect("validated index"),
            TestFunction::GaussianBump { center, width } => {
                let r2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| (xi - ci) * (xi - ci))
                    .sum();
                (-r2 / (2.0 * width * width)).exp()
            }
            TestFunction::CompactBump { center, radius } => {
                let u2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| {
                        let u = (xi - ci) / radius;
                        u * u
                    })
                    .sum();
                if u2 < 1.0 {
                    (-1.0 / (1.0 - u2)).exp()
                } else {
                    0.0
                }
            }
            TestFunction::Scale { a, f } => a * f.value(x),
            TestFunction::Sum { f, g } => f.value(x) + g.value(x),
            TestFunction::Product { f, g } => f.value(x) * g.value(x),
        }
    }

    /// Gradient into `out` (length `d`).
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(out.len(), d);
        match self {
            TestFunction::Hermite { k } => {
                // Product rule over axes: one derivative factor at a time.
                let per_axis: Vec<(f64, f64)> = k
                    .iter()
                    .zip(x)
                    .map(|(&ki, &xi)| {
                        (
                            hermite::eval_1d(ki, xi).expect("validated index"),
                            hermite::deriv_1d(ki, xi).expect("validated index"),
                        )
                    })
                    .collect();
                for i in 0..d {
                    let mut prod = 1.0;
                    for (j, &(v, dv)) in per_axis.iter().enumerate() {
                        prod *= if i == j { dv } else { v };
                    }
                    out[i] = prod;
                }
            }
            TestFunction::GaussianBump { center, width } => {
                let v = self.value(x);
                let w2 = width * width;
                for i in 0..d {
                    out[i] = -(x[i] - center[i]) / w2 * v;
                }
            }
            TestFunction::CompactBump { center, radius } => {
                let u2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| {
                        let u = (xi - ci) / radius;
                        u * u
                    })
                    .sum();
                if u2 >= 1.0 {
                    out.fill(0.0);
                    return;
                }
                let s = 1.0 - u2;
                let v = (-1.0 / s).exp();
                for i in 0..d {
                    let u = (x[i] - center[i]) / radius;
                    out[i] = -2.0 * u * v / (radius * s * s);
                }
            }
            TestFunction::Scale { a, f } => {
                f.gradient(x, out);
                for o in out.iter_mut() {
                    *o *= a;
                }
            }
            TestFunction::Sum { f, g } => {
                let mut tmp = vec![0.0; d];
                f.gradient(x, out);
                g.gradient(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += t;
                }
            }
            TestFunction::Product { f, g } => {
                let fv = f.value(x);
                let gv = g.value(x);
                let mut gf = vec![0.0; d];
                f.gradient(x, out);
                g.gradient(x, &mut gf);
                for (o, dg) in out.iter_mut().zip(&gf) {
                    *o = *o * gv + fv * dg;
                }
            }
        }
    }

    /// Hessian into `out` (row-major `d x d`).
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(out.len(), d * d);
        match self {
            TestFunction::Hermite { k } => {
                let per_axis: Vec<(f64, f64, f64)> = k
                    .iter()
                    .zip(x)
                    .map(|(&ki, &xi)| {
                        (
                            hermite::eval_1d(ki, xi).expect("validated index"),
                            hermite::deriv_1d(ki, xi).expect("validated index"),
                            hermite::deriv2_1d(ki, xi).expect("validated index"),
                        )
                    })
                    .collect();
                for i in 0..d {
                    for j in 0..d {
                        let mut prod = 1.0;
                        for (l, &(v, dv, d2v)) in per_axis.iter().enumerate() {
                            prod *= if l == i && l == j {
                                d2v
                            } else if l == i || l == j {
                                dv
                            } else {
                                v
                            };
                        }
                        out[i * d + j] = prod;
                    }
                }
            }
            TestFunction::GaussianBump { center, width } => {
                let v = self.value(x);
                let w2 = width * width;
                for i in 0..d {
                    for j in 0..d {
                        let ui = (x[i] - center[i]) / w2;
                        let uj = (x[j] - center[j]) / w2;
                        let diag = if i == j { 1.0 / w2 } else { 0.0 };
                        out[i * d + j] = v * (ui * uj - diag);
                    }
                }
            }
            TestFunction::CompactBump { center, radius } => {
                let u: Vec<f64> = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| (xi - ci) / radius)
                    .collect();
                let u2: f64 = u.iter().map(|v| v * v).sum();
                if u2 >= 1.0 {
                    out.fill(0.0);
                    return;
                }
                let s = 1.0 - u2;
                let v = (-1.0 / s).exp();
                let r2 = radius * radius;
                for i in 0..d {
                    for j in 0..d {
                        let diag = if i == j { 1.0 / (s * s) } else { 0.0 };
                        let cross = u[i] * u[j] * (4.0 / (s * s * s) - 2.0 / (s * s * s * s));
                        out[i * d + j] = -2.0 * v / r2 * (diag + cross);
                    }
                }
            }
            TestFunction::Scale { a, f } => {
                f.hessian(x, out);
                for o in out.iter_mut() {
                    *o *= a;
                }
            }
            TestFunction::Sum { f, g } => {
                let mut tmp = vec![0.0; d * d];
                f.hessian(x, out);
                g.hessian(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += t;
                }
            }
            TestFunction::Product { f, g } => {
                let fv = f.value(x);
                let gv = g.value(x);
                let mut grad_f = vec![0.0; d];
                let mut grad_g = vec![0.0; d];
                f.gradient(x, &mut grad_f);
                g.gradient(x, &mut grad_g);
                let mut hess_g = vec![0.0; d * d];
                f.hessian(x, out);
                g.hessian(x, &mut hess_g);
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = out[i * d + j] * gv
                            + fv * hess_g[i * d + j]
                            + grad_f[i] * grad_g[j]
                            + grad_f[j] * grad_g[i];
                    }
                }
            }
        }
    }

    /// Half-width of a centered box outside of which `(1+|x|^2) |phi|` (and
    /// its first two derivatives, up to modest polynomial factors) stays
    /// below `tail_tol`. Used to size quadrature and maximization boxes.
    pub fn decay_radius(&self, tail_tol: f64) -> f64 {
        let tol = tail_tol.clamp(1e-300, 0.5);
        match self {
            TestFunction::Hermite { k } => {
                // Oscillation ends near 2 sqrt(max k); beyond it the factor
                // exp(-x^2/4) takes over.
                let kmax = *k.iter().max().unwrap() as f64;
                2.0 * kmax.sqrt() + 2.0 * (1.0 / tol).ln().sqrt() + 4.0
            }
            TestFunction::GaussianBump { center, width } => {
                let c = center.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                c + width * (2.0 * (1.0 / tol).ln()).sqrt() + 4.0
            }
            TestFunction::CompactBump { center, radius } => {
                let c = center.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                c + radius
            }
            TestFunction::Scale { a, f } => f.decay_radius(tol / a.abs().max(1e-12)),
            TestFunction::Sum { f, g } | TestFunction::Product { f, g } => {
                f.decay_radius(tol).max(g.decay_radius(tol))
            }
        }
    }
}
