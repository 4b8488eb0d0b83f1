//! Pseudospectral simulator and verification workbench for the coupled
//! Yang-Mills-Dirac system in temporal gauge on a periodic 3-torus.
//!
//! The gauge group is SU(2); the gauge potential is evolved either as the
//! Hodge-split half-wave system (divergence-free half-waves plus a first-order
//! curl-free equation) or as the plain second-order wave system, with the
//! Gauss-law constraint monitored throughout.  On top of the solver sit
//! numerical checks for the null-form identities, the spinorial null bound,
//! discrete Bourgain-norm diagnostics, and the iterative gauge transformation
//! that removes the curl-free part of the initial data.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod fields;
pub mod gauge;
pub mod liealg;
pub mod spectral;
pub mod verify;

pub use num_complex::Complex64;

/// Shorthand used across the crate.
pub type C64 = num_complex::Complex64;
