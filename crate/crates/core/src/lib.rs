//! Numerical laboratory for smoothed interacting particle systems with
//! common noise.
//!
//! The library simulates an n-particle system in which every particle feels
//! three influences: a drift evaluated against a kernel-smoothed version of
//! the empirical measure, an idiosyncratic Brownian motion, and a Brownian
//! motion shared by the whole ensemble. Around the simulator sit the
//! diagnostic tools used to check the structural properties such systems are
//! supposed to have: martingale-problem residuals for the measure flow,
//! realized vs. predicted quadratic variation, Hermite and Bessel-potential
//! norms of the estimated densities, and distances between measure flows as
//! the particle count grows and the smoothing scale shrinks.
//!
//! Module map:
//! - [`mollify`]: compactly supported mollifier, smoothed empirical measures,
//!   smoothed drifts.
//! - [`coeffs`]: coefficient triples (drift, diffusion, common-noise
//!   loading), shipped drift families, assumption checkers.
//! - [`particles`]: Euler–Maruyama simulation of the particle system,
//!   reproducible across thread schedules.
//! - [`spectral`]: test functions with analytic derivatives, Hermite
//!   expansions, weighted-sequence norms, gridded densities and
//!   Fourier-multiplier norms.
//! - [`mgdiag`]: generator terms, martingale-problem characteristics, residual
//!   series and their Monte-Carlo tests.
//! - [`regularity`]: density norm curves with envelope fits, time-Hölder
//!   fits, interpolation checks, flow distances.

pub mod coeffs;
pub mod mgdiag;
pub mod mollify;
pub mod particles;
pub mod regularity;
pub mod rng;
pub mod spectral;
