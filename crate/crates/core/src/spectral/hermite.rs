//! Hermite functions with 1-based indexing.
//!
//! `h_1(x) = g(x)^{1/2}` with `g` the standard Gaussian density, and
//!
//! ```text
//! h_{k+2}(x) = (x / sqrt(k+1)) h_{k+1}(x) - sqrt(k / (k+1)) h_k(x)
//! ```
//!
//! for `k >= 0`. Equivalently `h_{j}` is the probabilists' Hermite
//! polynomial of degree `j - 1` times `g^{1/2} / sqrt((j-1)!)`, which makes
//! the family orthonormal in `L^2(dx)`. Indices start at one; a multi-index
//! `k` in `{1, 2, ...}^d` labels the product `h_{k_1}(x_1) ... h_{k_d}(x_d)`.
//!
//! The derivative ladder used throughout:
//!
//! ```text
//! h_j'(x)  = sqrt(j-1) h_{j-1}(x) - (x/2) h_j(x)
//! h_j''(x) = sqrt((j-1)(j-2)) h_{j-2}(x) - x sqrt(j-1) h_{j-1}(x)
//!            + (x^2/4 - 1/2) h_j(x)
//! ```
//!
//! with out-of-range terms dropped.

use super::SpectralError;

/// The three-term recurrence is validated (against the factorial-normalized
/// Rodrigues form and the sup-norm bound) only up to this per-axis degree.
pub const MAX_DEGREE: usize = 512;

/// `(2 pi)^{-1/4}`, the value `h_1(0)`.
pub fn h1_at_zero() -> f64 {
    (2.0 * std::f64::consts::PI).powf(-0.25)
}

/// Values `h_1(x) .. h_n(x)`, written into `out` (index `j - 1` holds `h_j`).
pub fn values_1d_into(x: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = h1_at_zero() * (-x * x / 4.0).exp();
    if n == 1 {
        return;
    }
    out[1] = x * out[0];
    for k in 1..n - 1 {
        let kf = k as f64;
        out[k + 1] = x / (kf + 1.0).sqrt() * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
}

pub fn values_1d(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    values_1d_into(x, &mut out);
    out
}

/// `h_k(x)` in one dimension, `k >= 1`.
pub fn eval_1d(k: usize, x: f64) -> Result<f64, SpectralError> {
    if k == 0 || k > MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(k));
    }
    Ok(values_1d(x, k)[k - 1])
}

/// First derivative `h_k'(x)` from the ladder.
pub fn deriv_1d(k: usize, x: f64) -> Result<f64, SpectralError> {
    if k == 0 || k > MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(k));
    }
    let vals = values_1d(x, k);
    let lower = if k >= 2 {
        ((k - 1) as f64).sqrt() * vals[k - 2]
    } else {
        0.0
    };
    Ok(lower - 0.5 * x * vals[k - 1])
}

/// Second derivative `h_k''(x)` from the ladder.
pub fn deriv2_1d(k: usize, x: f64) -> Result<f64, SpectralError> {
    if k == 0 || k > MAX_DEGREE {
        return Err(SpectralError::DegreeOutOfRange(k));
    }
    let vals = values_1d(x, k);
    let mut acc = (x * x / 4.0 - 0.5) * vals[k - 1];
    if k >= 2 {
        acc -= x * ((k - 1) as f64).sqrt() * vals[k - 2];
    }
    if k >= 3 {
        acc += (((k - 1) * (k - 2)) as f64).sqrt() * vals[k - 3];
    }
    Ok(acc)
}

/// Product Hermite function `h_k(x)` for a multi-index `k`, all entries >= 1.
pub fn eval_multi(k: &[usize], x: &[f64]) -> Result<f64, SpectralError> {
    if k.len() != x.len() {
        return Err(SpectralError::DimMismatch {
            expected: k.len(),
            got: x.len(),
        });
    }
    let mut prod = 1.0;
    for (&ki, &xi) in k.iter().zip(x) {
        prod *= eval_1d(ki, xi)?;
    }
    Ok(prod)
}
