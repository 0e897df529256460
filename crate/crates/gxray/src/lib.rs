//! Numerical toolkit for the weighted geodesic X-ray transform on chart
//! domains with strictly convex boundary.
//!
//! The crate is organized around the pipeline the transform lives in:
//!
//! - [`manifold`]: metric families (euclidean, conformal sound speeds, round
//!   sphere patch) with analytic derivatives, domains and boundary geometry.
//! - [`flow`]: geodesic flow on the unit sphere bundle, exit times, the
//!   footpoint map to inward boundary rays, and the exponential map.
//! - [`jacobi`]: matrix Jacobi fields along traces (the derivative of the flow).
//! - [`xray`]: forward transform, its adjoint under the Santaló measure, and
//!   the normal operator by both the composed and the direct route.
//! - [`conjugacy`]: detection and classification of conjugate pairs, the
//!   covector pairing, and canonical-graph conditioning tests.
//! - [`microlocal`]: oscillatory-probe decay exponents, point-spread fits and
//!   artifact localization.
//! - [`inversion`]: Sobolev norms on a padded torus, Tikhonov-regularized
//!   inversion by conjugate gradients, convergence-rate and stability-spectrum
//!   experiments.
//! - [`config`] / [`experiment`]: config-driven experiment runner behind the
//!   `gxray` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod conjugacy;
pub mod error;
pub mod flow;
pub mod grid;
pub mod jacobi;
pub mod linalg;
pub mod manifold;
pub mod microlocal;
pub mod xray;

pub use error::{Error, Result};
pub use manifold::{Covector, DomainModel, DomainShape, MetricModel, Point, SoundSpeed};

/// Tool version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
