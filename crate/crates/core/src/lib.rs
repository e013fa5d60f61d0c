//! Numerical laboratory for missing-data and coarsening mechanisms over
//! affine Gaussian families.
//!
//! The crate evaluates, by Gauss–Hermite quadrature with Monte Carlo
//! cross-checks, whether a mechanism is missing at random (MAR), coarsening
//! at random (CAR) and likelihood ignorable (LIG) for a given family, and
//! fits maximum-likelihood estimates with and without modelling the
//! mechanism.
//!
//! Module map:
//! - [`model`]: Gaussian families, response patterns, observed subvectors.
//! - [`numerics`]: quadrature, normal CDF, Monte Carlo, scalar maximizer.
//! - [`mechanisms`]: missing-data and coarsening mechanisms.
//! - [`verifiers`]: MAR / LIG / CAR / witness checks producing verdicts.
//! - [`inference`]: simulation, log-likelihoods, fits, bias experiments.
//! - [`cli`]: scenario files, reports and the `iglab` command.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod inference;
pub mod mechanisms;
pub mod model;
pub mod numerics;
pub mod verifiers;

pub use error::{Error, Result};
pub use mechanisms::{CdmKind, CdmSpec, CoarseRegion, MdmKind, MdmSpec, RegionCoord};
pub use model::{AffineGaussianFamily, Gaussian, Observation, ResponsePattern, ThetaGrid};
pub use numerics::{GaussHermite, QuadratureSpec};
pub use verifiers::{CheckConfig, Status, Verdict, Witness};

/// Version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use nalgebra;
