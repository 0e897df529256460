//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A point fell outside the closed domain (or the metric's validity region).
    #[error("point ({x:.6}, {y:.6}, {z:.6}) is outside the domain: {context}")]
    OutsideDomain {
        x: f64,
        y: f64,
        z: f64,
        context: String,
    },

    /// An operation that requires a boundary point was handed an interior or exterior one.
    #[error("point is not on the boundary (defining value {rho:.3e}, tolerance {tol:.3e})")]
    NotOnBoundary { rho: f64, tol: f64 },

    /// A geodesic failed to reach the boundary within the time budget.
    #[error("geodesic exceeded the integration budget {budget:.3} without exiting (non-trapping assumption violated numerically)")]
    TrappedGeodesic { budget: f64 },

    /// A geodesic left the extended integration region.
    #[error("geodesic left the extended domain: {0}")]
    RangeExit(String),

    /// Config parse/validation failure with a line-precise message.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// Generic numerical failure (root polish, fit window, CG stagnation, ...).
    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed on-disk artifact (grid file, manifest, ...).
    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub fn outside(coords: [f64; 3], context: impl Into<String>) -> Self {
        Error::OutsideDomain {
            x: coords[0],
            y: coords[1],
            z: coords[2],
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
