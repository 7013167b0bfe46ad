//! Gridded densities on centered boxes.
//!
//! A `DensityGrid` samples a nonnegative function at the cell centers of a
//! uniform grid over `[-L, L]^d`. It is the computable stand-in for an
//! absolutely continuous measure: mass and L^p norms are cell sums, and the
//! Fourier diagnostics in [`super::bessel`] treat it as one period of a
//! periodic extension.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::SpectralError;

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed grid file: {0}")]
    Format(String),
}

/// Nonnegative samples at the cell centers of `[-L, L]^d`, axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    d: usize,
    half_width: f64,
    resolution: usize,
    values: Vec<f64>,
}

impl DensityGrid {
    /// Zero-filled grid. Dimensions above two are out of scope for the
    /// spectral diagnostics.
    pub fn new(d: usize, half_width: f64, resolution: usize) -> Result<Self, SpectralError> {
        if d == 0 || d > 2 {
            return Err(SpectralError::UnsupportedDim(d));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(SpectralError::BadParameter(format!(
                "box half-width must be positive and finite, got {half_width}"
            )));
        }
        if resolution < 2 {
            return Err(SpectralError::BadParameter(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        Ok(DensityGrid {
            d,
            half_width,
            resolution,
            values: vec![0.0; resolution.pow(d as u32)],
        })
    }

    /// Grid sampling `f` at the cell centers; rejects negative or
    /// non-finite samples.
    pub fn from_fn(
        d: usize,
        half_width: f64,
        resolution: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, SpectralError> {
        let mut grid = DensityGrid::new(d, half_width, resolution)?;
        let mut point = vec![0.0; d];
        for flat in 0..grid.values.len() {
            grid.coords_of(flat, &mut point);
            let v = f(&point);
            if !v.is_finite() || v < 0.0 {
                return Err(SpectralError::BadParameter(format!(
                    "density sample {v} at {point:?} is not a nonnegative finite value"
                )));
            }
            grid.values[flat] = v;
        }
        Ok(grid)
    }

    /// Wrap existing samples (row-major, axis 0 fastest).
    pub fn from_values(
        d: usize,
        half_width: f64,
        resolution: usize,
        values: Vec<f64>,
    ) -> Result<Self, SpectralError> {
        let grid = DensityGrid::new(d, half_width, resolution)?;
        if values.len() != grid.values.len() {
            return Err(SpectralError::BadParameter(format!(
                "expected {} values, got {}",
                grid.values.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SpectralError::BadParameter(
                "grid values must be nonnegative and finite".into(),
            ));
        }
        Ok(DensityGrid { values, ..grid })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_width / self.resolution as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width().powi(self.d as i32)
    }

    /// Center coordinate of cell `j` along any axis.
    pub fn axis_coord(&self, j: usize) -> f64 {
        debug_assert!(j < self.resolution);
        -self.half_width + (j as f64 + 0.5) * self.cell_width()
    }

    /// Coordinates of the cell with flat index `flat` into `point`.
    pub fn coords_of(&self, flat: usize, point: &mut [f64]) {
        let mut rem = flat;
        for axis in 0..self.d {
            point[axis] = self.axis_coord(rem % self.resolution);
            rem /= self.resolution;
        }
    }

    /// Multilinear interpolation at x, clamped to the outermost cell
    /// centers; `None` once x leaves the box itself.
    pub fn interp(&self, x: &[f64]) -> Option<f64> {
        debug_assert_eq!(x.len(), self.d);
        let res = self.resolution;
        let cell = self.cell_width();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for axis in 0..self.d {
            if x[axis].abs() > self.half_width {
                return None;
            }
            let pos = (x[axis] + self.half_width) / cell - 0.5;
            let b = pos.floor().clamp(0.0, (res - 2) as f64);
            base[axis] = b as usize;
            frac[axis] = (pos - b).clamp(0.0, 1.0);
        }
        Some(match self.d {
            1 => {
                let a = self.values[base[0]];
                let b = self.values[base[0] + 1];
                a + frac[0] * (b - a)
            }
            _ => {
                let at = |j0: usize, j1: usize| self.values[j0 + res * j1];
                let lo = at(base[0], base[1])
                    + frac[0] * (at(base[0] + 1, base[1]) - at(base[0], base[1]));
                let hi = at(base[0], base[1] + 1)
                    + frac[0] * (at(base[0] + 1, base[1] + 1) - at(base[0], base[1] + 1));
                lo + frac[1] * (hi - lo)
            }
        })
    }

    /// Total mass `sum values * cell_volume`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Discrete `L^p` norm, `p >= 1`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "L^p norm needs p >= 1, got {p}");
        let vol = self.cell_volume();
        if p == 1.0 {
            return self.values.iter().map(|v| v.abs()).sum::<f64>() * vol;
        }
        if p == 2.0 {
            return (self.values.iter().map(|v| v * v).sum::<f64>() * vol).sqrt();
        }
        (self
            .values
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            * vol)
            .powf(1.0 / p)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// Largest sample on the outermost cell layer relative to the overall
    /// peak; the periodization and truncation guards compare this against
    /// [`super::BOUNDARY_TOL`]. Zero for an all-zero grid.
    pub fn boundary_peak_fraction(&self) -> f64 {
        let peak = self.max_value();
        if peak == 0.0 {
            return 0.0;
        }
        let res = self.resolution;
        let on_rim = |j: usize| j == 0 || j == res - 1;
        let mut boundary = 0.0f64;
        match self.d {
            1 => {
                boundary = self.values[0].max(self.values[res - 1]);
            }
            _ => {
                for i2 in 0..res {
                    for i1 in 0..res {
                        if on_rim(i1) || on_rim(i2) {
                            boundary = boundary.max(self.values[i1 + res * i2]);
                        }
                    }
                }
            }
        }
        boundary / peak
    }

    /// CSV layout: one header row with the per-axis cell-center
    /// coordinates, then the values (one row in d = 1; in d = 2 one row per
    /// axis-1 index, columns running over axis 0). Floats print in Rust's
    /// shortest round-trip form, so read-back is exact.
    pub fn write_csv(&self, path: &Path) -> Result<(), GridIoError> {
        let mut out = BufWriter::new(File::create(path)?);
        let coords: Vec<String> = (0..self.resolution)
            .map(|j| self.axis_coord(j).to_string())
            .collect();
        writeln!(out, "{}", coords.join(","))?;
        let res = self.resolution;
        let rows = if self.d == 1 { 1 } else { res };
        for row in 0..rows {
            let line: Vec<String> = (0..res)
                .map(|col| self.values[col + res * row].to_string())
                .collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, GridIoError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| GridIoError::Format("empty file".into()))??;
        let coords: Vec<f64> = header
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| GridIoError::Format(format!("bad coordinate {tok:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let res = coords.len();
        if res < 2 {
            return Err(GridIoError::Format("need at least two cells".into()));
        }
        // Cell centers span (res - 1) cell widths; recover L from the ends.
        let width = (coords[res - 1] - coords[0]) / (res - 1) as f64;
        let half_width = 0.5 * width * res as f64;
        let mut values = Vec::new();
        let mut rows = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            for tok in line.split(',') {
                let v = tok
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GridIoError::Format(format!("bad value {tok:?}: {e}")))?;
                values.push(v);
            }
        }
        let d = match rows {
            1 => 1,
            r if r == res => 2,
            r => {
                return Err(GridIoError::Format(format!(
                    "{r} value rows do not match a {res}-cell axis"
                )))
            }
        };
        DensityGrid::from_values(d, half_width, res, values)
            .map_err(|e| GridIoError::Format(e.to_string()))
    }

    /// Raw binary layout: `u64 d`, `f64 half_width`, `u64 resolution`, then
    /// the row-major values, all little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<(), GridIoError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&(self.d as u64).to_le_bytes())?;
        out.write_all(&self.half_width.to_le_bytes())?;
        out.write_all(&(self.resolution as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self, GridIoError> {
        let mut file = BufReader::new(File::open(path)?);
        let mut u64buf = [0u8; 8];
        file.read_exact(&mut u64buf)?;
        let d = u64::from_le_bytes(u64buf) as usize;
        file.read_exact(&mut u64buf)?;
        let half_width = f64::from_le_bytes(u64buf);
        file.read_exact(&mut u64buf)?;
        let resolution = u64::from_le_bytes(u64buf) as usize;
        if d == 0 || d > 2 || resolution < 2 || resolution > 1 << 24 {
            return Err(GridIoError::Format(format!(
                "implausible header: d = {d}, resolution = {resolution}"
            )));
        }
        let count = resolution.pow(d as u32);
        let mut values = vec![0.0; count];
        for v in values.iter_mut() {
            file.read_exact(&mut u64buf)?;
            *v = f64::from_le_bytes(u64buf);
        }
        DensityGrid::from_values(d, half_width, resolution, values)
            .map_err(|e| GridIoError::Format(e.to_string()))
    }
}
