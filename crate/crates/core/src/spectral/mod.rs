//! Hermite side of the laboratory: coefficient tables, H_p norms, duality
//! pairings, Schwartz seminorms, and Bessel norms on gridded densities.
//!
//! A measure or function is reduced to the vector of its coefficients
//! against the orthonormal Hermite family (see [`hermite`]), truncated at a
//! per-axis cutoff. All downstream diagnostics (pairings, norms) are finite
//! sums over that table, so they are exactly reproducible from the source
//! and the cutoff.

pub mod bessel;
pub mod grid;
pub mod hermite;
pub mod testfn;

pub use grid::DensityGrid;
pub use testfn::TestFunction;

use thiserror::Error;

/// Default per-axis truncation cutoff in one dimension. Chosen so that
/// point-mass pairings against unit-width Gaussian bumps close to 1e-6.
pub const DEFAULT_CUTOFF_1D: usize = 60;
/// Default per-axis truncation cutoff in two dimensions.
pub const DEFAULT_CUTOFF_2D: usize = 24;

/// Relative size of a boundary density value that still permits treating
/// the box as the whole space (periodization and truncation control).
pub const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("Hermite index {0} out of range (1..={max})", max = hermite::MAX_DEGREE)]
    DegreeOutOfRange(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("operation supports d <= 2, got d = {0}")]
    UnsupportedDim(usize),
    #[error("seminorm implemented for derivative order <= 2, got {0}")]
    UnsupportedOrder(usize),
    #[error("L^r exponent must exceed 1, got {0}")]
    BadExponent(f64),
    #[error("boundary holds a {fraction:.2e} fraction of the peak; box too small for periodization")]
    BoundaryMass { fraction: f64 },
    #[error("{0}")]
    BadParameter(String),
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Newton's method on the Legendre recurrence; the classical
/// `cos(pi (i - 1/4) / (n + 1/2))` initial guesses converge in a handful of
/// iterations for every root, so no external quadrature crate is needed.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' at x via the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut nodes, mut weights) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    for x in nodes.iter_mut() {
        *x = mid + half * *x;
    }
    for w in weights.iter_mut() {
        *w *= half;
    }
    (nodes, weights)
}

/// Truncated Hermite coefficient table of a measure or function.
///
/// Entries are indexed by multi-indices `k` in `{1..N}^d` stored flat with
/// axis 0 fastest: `flat = (k_1 - 1) + N (k_2 - 1) + ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteCoeffTable {
    d: usize,
    max_degree: usize,
    coeffs: Vec<f64>,
    source: String,
    truncation_warning: bool,
}

impl HermiteCoeffTable {
    /// Wrap precomputed coefficients. Rejects non-finite entries and size
    /// mismatches; mostly useful for oracles and cross-checks.
    pub fn from_raw(
        d: usize,
        max_degree: usize,
        coeffs: Vec<f64>,
        source: impl Into<String>,
    ) -> Result<Self, SpectralError> {
        if d == 0 {
            return Err(SpectralError::BadParameter("dimension zero".into()));
        }
        if max_degree == 0 || max_degree > hermite::MAX_DEGREE {
            return Err(SpectralError::DegreeOutOfRange(max_degree));
        }
        let expect = max_degree.pow(d as u32);
        if coeffs.len() != expect {
            return Err(SpectralError::BadParameter(format!(
                "expected {expect} coefficients, got {}",
                coeffs.len()
            )));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(SpectralError::BadParameter(
                "non-finite coefficient".into(),
            ));
        }
        Ok(HermiteCoeffTable {
            d,
            max_degree,
            coeffs,
            source: source.into(),
            truncation_warning: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the construction detected that the cutoff or the
    /// integration box visibly truncates the source.
    pub fn truncation_warning(&self) -> bool {
        self.truncation_warning
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn flat_index(&self, k: &[usize]) -> usize {
        debug_assert_eq!(k.len(), self.d);
        let mut idx = 0;
        let mut stride = 1;
        for &ki in k {
            debug_assert!((1..=self.max_degree).contains(&ki));
            idx += (ki - 1) * stride;
            stride *= self.max_degree;
        }
        idx
    }

    /// Coefficient at the 1-based multi-index `k`.
    pub fn coeff(&self, k: &[usize]) -> Result<f64, SpectralError> {
        if k.len() != self.d {
            return Err(SpectralError::DimMismatch {
                expected: self.d,
                got: k.len(),
            });
        }
        for &ki in k {
            if ki < 1 || ki > self.max_degree {
                return Err(SpectralError::DegreeOutOfRange(ki));
            }
        }
        Ok(self.coeffs[self.flat_index(k)])
    }
}

/// Visit every multi-index in `{1..=n}^d` in flat (axis-0 fastest) order.
fn for_each_multi_index(d: usize, n: usize, mut visit: impl FnMut(&[usize])) {
    let mut k = vec![1usize; d];
    loop {
        visit(&k);
        let mut axis = 0;
        loop {
            if axis == d {
                return;
            }
            k[axis] += 1;
            if k[axis] <= n {
                break;
            }
            k[axis] = 1;
            axis += 1;
        }
    }
}

/// Coefficients of the empirical measure `(1/n) sum_i delta_{X_i}`.
///
/// `positions` is flat row-major `n x d`. Exact finite sums, so there is no
/// box to outgrow and no truncation warning.
pub fn hermite_coeffs_atoms(
    positions: &[f64],
    d: usize,
    max_degree: usize,
) -> Result<HermiteCoeffTable, SpectralError> {
    if d == 0 {
        return Err(SpectralError::BadParameter("dimension zero".into()));
    }
    if max_degree == 0 || max_degree > hermite::MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(max_degree));
    }
    if positions.is_empty() || positions.len() % d != 0 {
        return Err(SpectralError::BadParameter(format!(
            "positions length {} is not a positive multiple of d = {d}",
            positions.len()
        )));
    }
    let n_atoms = positions.len() / d;
    let mut coeffs = vec![0.0; max_degree.pow(d as u32)];
    let mut axis_vals = vec![vec![0.0; max_degree]; d];
    for atom in positions.chunks_exact(d) {
        for (axis, &x) in atom.iter().enumerate() {
            if !x.is_finite() {
                return Err(SpectralError::BadParameter(
                    "non-finite particle position".into(),
                ));
            }
            hermite::values_1d_into(x, &mut axis_vals[axis]);
        }
        let mut flat = 0;
        for_each_multi_index(d, max_degree, |k| {
            let mut prod = 1.0;
            for (axis, &ki) in k.iter().enumerate() {
                prod *= axis_vals[axis][ki - 1];
            }
            coeffs[flat] += prod;
            flat += 1;
        });
    }
    let scale = 1.0 / n_atoms as f64;
    for c in coeffs.iter_mut() {
        *c *= scale;
    }
    Ok(HermiteCoeffTable {
        d,
        max_degree,
        coeffs,
        source: format!("atoms(n={n_atoms})"),
        truncation_warning: false,
    })
}

/// Shared quadrature core: coefficients of the "function" with value
/// `f(node)` against a separable rule with identical per-axis nodes.
/// Supports d = 1 and d = 2 (the simulator's spectral diagnostics do not go
/// higher); uses axis-by-axis contraction, so cost is
/// `O(nodes^2 max_degree)` rather than `O((nodes max_degree)^d)`.
fn coeffs_on_separable_rule(
    d: usize,
    max_degree: usize,
    nodes: &[f64],
    weights: &[f64],
    mut f_at: impl FnMut(&[usize]) -> f64,
) -> Vec<f64> {
    let nn = nodes.len();
    let nd = max_degree;
    // H[node][k] for the shared axis rule.
    let mut h = vec![0.0; nn * nd];
    let mut row = vec![0.0; nd];
    for (i, &x) in nodes.iter().enumerate() {
        hermite::values_1d_into(x, &mut row);
        h[i * nd..(i + 1) * nd].copy_from_slice(&row);
    }
    match d {
        1 => {
            let mut coeffs = vec![0.0; nd];
            for i in 0..nn {
                let wf = weights[i] * f_at(&[i]);
                for k in 0..nd {
                    coeffs[k] += wf * h[i * nd + k];
                }
            }
            coeffs
        }
        2 => {
            // Contract axis 0 first: B[k1][n2] = sum_{n1} w f H, then axis 1.
            let mut b = vec![0.0; nd * nn];
            for i2 in 0..nn {
                for i1 in 0..nn {
                    let wf = weights[i1] * weights[i2] * f_at(&[i1, i2]);
                    for k1 in 0..nd {
                        b[k1 * nn + i2] += wf * h[i1 * nd + k1];
                    }
                }
            }
            let mut coeffs = vec![0.0; nd * nd];
            for k2 in 0..nd {
                for i2 in 0..nn {
                    let hk2 = h[i2 * nd + k2];
                    for k1 in 0..nd {
                        coeffs[k1 + nd * k2] += b[k1 * nn + i2] * hk2;
                    }
                }
            }
            coeffs
        }
        _ => unreachable!("dimension validated by callers"),
    }
}

/// Does the outermost shell of the table still carry weight? If the largest
/// coefficient with some `k_i = N` is not negligible next to the overall
/// largest, the cutoff (or the box feeding it) truncates the source.
fn shell_truncation_warning(d: usize, max_degree: usize, coeffs: &[f64]) -> bool {
    let mut peak = 0.0f64;
    let mut shell = 0.0f64;
    let mut flat = 0;
    for_each_multi_index(d, max_degree, |k| {
        let a = coeffs[flat].abs();
        peak = peak.max(a);
        if k.iter().any(|&ki| ki == max_degree) {
            shell = shell.max(a);
        }
        flat += 1;
    });
    peak > 0.0 && shell > 1e-6 * peak
}

/// Coefficients of a test function: `c_k = integral phi h_k dx` by
/// Gauss-Legendre quadrature on `[-L, L]^d` with `L` taken from the
/// function's own decay radius.
pub fn hermite_coeffs_fn(
    phi: &TestFunction,
    max_degree: usize,
) -> Result<HermiteCoeffTable, SpectralError> {
    let d = phi.dim();
    if d > 2 {
        return Err(SpectralError::UnsupportedDim(d));
    }
    if max_degree == 0 || max_degree > hermite::MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(max_degree));
    }
    // The integrand phi h_k oscillates on the Hermite side out to about
    // 2 sqrt(N); the box and node count must cover whichever of the two
    // factors reaches farther.
    let half_width = phi
        .decay_radius(1e-12)
        .max(2.0 * (max_degree as f64).sqrt() + 8.0);
    let nodes_per_axis = if d == 1 { 800 } else { 400 };
    let (nodes, weights) = gauss_legendre_on(nodes_per_axis, -half_width, half_width);
    let mut point = vec![0.0; d];
    let coeffs = coeffs_on_separable_rule(d, max_degree, &nodes, &weights, |idx| {
        for (axis, &i) in idx.iter().enumerate() {
            point[axis] = nodes[i];
        }
        phi.value(&point)
    });
    let truncation_warning = shell_truncation_warning(d, max_degree, &coeffs);
    Ok(HermiteCoeffTable {
        d,
        max_degree,
        coeffs,
        source: format!("function({}, L={half_width:.2}, nodes={nodes_per_axis})", phi.id()),
        truncation_warning,
    })
}

/// Coefficients of a gridded density by cell sums:
/// `c_k = sum_cells f(x_cell) h_k(x_cell) cell_volume`.
pub fn hermite_coeffs_grid(
    grid: &DensityGrid,
    max_degree: usize,
) -> Result<HermiteCoeffTable, SpectralError> {
    let d = grid.dim();
    if d > 2 {
        return Err(SpectralError::UnsupportedDim(d));
    }
    if max_degree == 0 || max_degree > hermite::MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(max_degree));
    }
    let res = grid.resolution();
    let nodes: Vec<f64> = (0..res).map(|j| grid.axis_coord(j)).collect();
    let cell = grid.cell_width();
    let weights = vec![cell; res];
    let values = grid.values();
    let coeffs = coeffs_on_separable_rule(d, max_degree, &nodes, &weights, |idx| match d {
        1 => values[idx[0]],
        _ => values[idx[0] + res * idx[1]],
    });
    let truncation_warning = shell_truncation_warning(d, max_degree, &coeffs)
        || grid.boundary_peak_fraction() > BOUNDARY_TOL;
    Ok(HermiteCoeffTable {
        d,
        max_degree,
        coeffs,
        source: format!("grid(L={}, res={res})", grid.half_width()),
        truncation_warning,
    })
}

/// Duality pairing `lambda[phi] = sum_k lambda_k phi_k`, truncated to the
/// smaller of the two cutoffs.
pub fn pairing(
    lam: &HermiteCoeffTable,
    phi: &HermiteCoeffTable,
) -> Result<f64, SpectralError> {
    if lam.dim() != phi.dim() {
        return Err(SpectralError::DimMismatch {
            expected: lam.dim(),
            got: phi.dim(),
        });
    }
    let n = lam.max_degree().min(phi.max_degree());
    let mut acc = 0.0;
    for_each_multi_index(lam.dim(), n, |k| {
        acc += lam.coeffs[lam.flat_index(k)] * phi.coeffs[phi.flat_index(k)];
    });
    Ok(acc)
}

/// Weighted-ℓ² norm `( sum_k (<k>^{p/d} lambda_k)^2 )^{1/2}` with
/// `<k> = (1 + |k|^2)^{1/2}` over 1-based multi-indices.
pub fn hp_norm(table: &HermiteCoeffTable, p: f64) -> f64 {
    let d = table.dim() as f64;
    let mut acc = 0.0;
    let mut flat = 0;
    for_each_multi_index(table.dim(), table.max_degree(), |k| {
        let k2: f64 = k.iter().map(|&ki| (ki * ki) as f64).sum();
        let weight = (1.0 + k2).powf(p / (2.0 * d));
        let term = weight * table.coeffs[flat];
        acc += term * term;
        flat += 1;
    });
    acc.sqrt()
}

/// Weighted Schwartz seminorm
/// `max_{|alpha| <= m} sup_x <x>^m |D^alpha phi(x)|` with
/// `<x> = (1 + |x|^2)^{1/2}`, by dense-grid maximization over the
/// function's decay box. Supports `m <= 2`.
pub fn seminorm_star(phi: &TestFunction, m: usize) -> Result<f64, SpectralError> {
    seminorm_star_with_resolution(phi, m, 0)
}

/// Same with an explicit per-axis point count (0 selects the default);
/// exposed so refinement-stability checks can vary the grid.
pub fn seminorm_star_with_resolution(
    phi: &TestFunction,
    m: usize,
    points_per_axis: usize,
) -> Result<f64, SpectralError> {
    if m > 2 {
        return Err(SpectralError::UnsupportedOrder(m));
    }
    let d = phi.dim();
    if d > 2 {
        return Err(SpectralError::UnsupportedDim(d));
    }
    let pts = if points_per_axis > 0 {
        points_per_axis
    } else if d == 1 {
        4001
    } else {
        501
    };
    let radius = phi.decay_radius(1e-12);
    let step = 2.0 * radius / (pts - 1) as f64;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut point = vec![0.0; d];
    let mut best = 0.0f64;
    let total = pts.pow(d as u32);
    for flat in 0..total {
        let mut rem = flat;
        for axis in 0..d {
            point[axis] = -radius + step * (rem % pts) as f64;
            rem /= pts;
        }
        let x2: f64 = point.iter().map(|v| v * v).sum();
        let weight = (1.0 + x2).powf(m as f64 / 2.0);
        let mut local = phi.value(&point).abs();
        if m >= 1 {
            phi.gradient(&point, &mut grad);
            for g in &grad {
                local = local.max(g.abs());
            }
        }
        if m >= 2 {
            phi.hessian(&point, &mut hess);
            for h in &hess {
                local = local.max(h.abs());
            }
        }
        best = best.max(weight * local);
    }
    Ok(best)
}
