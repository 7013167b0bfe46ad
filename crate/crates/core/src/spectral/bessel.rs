//! Bessel potential norms `|| J^w f ||_{L^r}` on gridded densities.
//!
//! `J^w` is the Fourier multiplier `(1 + |xi|^2)^{w/2}`. On a grid the
//! transform is the DFT of one period of the periodic extension of the box
//! `[-L, L]^d`, with frequencies `xi_j = pi j~ / L` for signed bin index
//! `j~`. That is a faithful stand-in for the whole-space operator only when
//! the density has already decayed at the box edge, which the boundary
//! guard enforces.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DensityGrid, SpectralError, BOUNDARY_TOL};

/// Signed frequency for DFT bin `j` of `n` on a box of half-width `l`.
fn frequency(j: usize, n: usize, l: f64) -> f64 {
    let signed = if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    };
    std::f64::consts::PI * signed / l
}

/// `|| J^w f ||_{L^r}` with `J^w = F^{-1} (1 + |xi|^2)^{w/2} F`, `r > 1`.
pub fn bessel_norm(grid: &DensityGrid, w: f64, r: f64) -> Result<f64, SpectralError> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(SpectralError::BadExponent(r));
    }
    if !w.is_finite() {
        return Err(SpectralError::BadParameter(format!(
            "multiplier order must be finite, got {w}"
        )));
    }
    let fraction = grid.boundary_peak_fraction();
    if fraction > BOUNDARY_TOL {
        return Err(SpectralError::BoundaryMass { fraction });
    }
    if w == 0.0 {
        // J^0 is the identity; skip the transform entirely so the result
        // is the discrete L^r norm, not merely close to it.
        return Ok(grid.lp_norm(r));
    }

    let n = grid.resolution();
    let l = grid.half_width();
    let mut buf: Vec<Complex<f64>> = grid
        .values()
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    match grid.dim() {
        1 => {
            forward.process(&mut buf);
            for (j, z) in buf.iter_mut().enumerate() {
                let xi = frequency(j, n, l);
                *z *= (1.0 + xi * xi).powf(w / 2.0);
            }
            inverse.process(&mut buf);
        }
        _ => {
            // Axis 0 rows are contiguous; axis 1 needs a gather/scatter.
            for row in buf.chunks_exact_mut(n) {
                forward.process(row);
            }
            let mut column = vec![Complex::new(0.0, 0.0); n];
            for i1 in 0..n {
                for i2 in 0..n {
                    column[i2] = buf[i1 + n * i2];
                }
                forward.process(&mut column);
                for i2 in 0..n {
                    buf[i1 + n * i2] = column[i2];
                }
            }
            for i2 in 0..n {
                let xi2 = frequency(i2, n, l);
                for i1 in 0..n {
                    let xi1 = frequency(i1, n, l);
                    buf[i1 + n * i2] *= (1.0 + xi1 * xi1 + xi2 * xi2).powf(w / 2.0);
                }
            }
            for row in buf.chunks_exact_mut(n) {
                inverse.process(row);
            }
            for i1 in 0..n {
                for i2 in 0..n {
                    column[i2] = buf[i1 + n * i2];
                }
                inverse.process(&mut column);
                for i2 in 0..n {
                    buf[i1 + n * i2] = column[i2];
                }
            }
        }
    }

    // rustfft leaves both passes unnormalized: divide by N per axis.
    let scale = 1.0 / (n as f64).powi(grid.dim() as i32);
    let vol = grid.cell_volume();
    let sum: f64 = buf
        .iter()
        .map(|z| (z.re * scale).abs().powf(r))
        .sum();
    Ok((sum * vol).powf(1.0 / r))
}
