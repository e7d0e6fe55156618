//! Estimation of incident sound fields from pressures measured on a rigid
//! spherical microphone array.
//!
//! The library covers the full experiment pipeline:
//!
//! * [`special`] — spherical Bessel/Hankel functions, complex-argument
//!   order-zero Bessel, and orthonormal spherical harmonics.
//! * [`geometry`] — the 60-microphone spherical design, the 26-node Lebedev
//!   direction grid, and evaluation-point samplers.
//! * [`kernel`] — Bessel, multidirectional, and source-region kernels with
//!   their Gram matrices and radial normal-derivative Grams.
//! * [`estimator`] — the spherical-wave-function expansion, open-field kernel
//!   ridge regression, and the boundary-constrained solver.
//! * [`mdopt`] — proximal-gradient adaptation of the multidirectional kernel
//!   under a leave-one-out cross-validation loss.
//! * [`simulation`] — point-source scenes, the rigid-sphere forward model,
//!   and calibrated additive noise.
//! * [`evaluation`] — NMSE, frequency sweeps, and planar field/error maps.
//! * [`ingest`] — impulse-response CSV loading and DFT-based snapshots.
//! * [`config`] / [`cli`] — the experiment configuration file and the
//!   subcommand drivers behind the `sfe` binary.
//!
//! All sound fields use the `exp(-i omega t)` time convention, so outgoing
//! waves carry `exp(+ikr)` and the radiating basis uses spherical Hankel
//! functions of the first kind. Spherical harmonics are complex orthonormal
//! with the Condon-Shortley phase.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod geometry;
pub mod ingest;
pub mod kernel;
pub mod linalg;
pub mod mdopt;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};
