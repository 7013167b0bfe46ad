//! Study driver around `mvlab-core`: scenario configs, the two-parameter
//! study grid, and table/plot emission.

pub mod config;
pub mod emit;
pub mod study;
pub mod svg;
