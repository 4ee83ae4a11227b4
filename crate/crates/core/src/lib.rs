//! Numerical laboratory for pilot-wave (de Broglie-Bohm) quantum mechanics.
//!
//! Wave functions live on uniform grids ([`grid`], [`field`]) or as short
//! sums of product states ([`separable`]). They are evolved by the
//! Schrödinger equation ([`propagator`]) while configurations follow the
//! guiding equation ([`guidance`]). Ensembles start in quantum equilibrium
//! ([`equilibrium`]); [`measurement`] and [`experiments`] build the pointer,
//! camera, double-slit, packet-exchange and absolute-uncertainty scenarios on
//! top.

pub mod equilibrium;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod fft;
pub mod field;
pub mod grid;
pub mod guidance;
pub mod interp;
pub mod measurement;
pub mod propagator;
pub mod report;
pub mod separable;

pub use error::{Error, Result};
pub use field::GridField;
pub use grid::{Axis, Boundary, GridSpec, Interval, RegionSpec};
pub use num_complex::Complex64 as C64;
