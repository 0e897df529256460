//! The weighted geodesic X-ray transform and its companions: weight fields on
//! the sphere bundle, the discrete inward-boundary ray grid carrying the
//! Santaló measure, sinograms, and per-point sphere quadrature rules.
//!
//! Operator implementations live in [`projector`].

mod projector;

pub use projector::{NsmProbe, Projector};

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{BoundaryChart, BoundaryRay, PhaseState};
use crate::grid::GridGeom;
use crate::linalg::{self, Vector};
use crate::manifold::{DomainModel, MetricModel};

/// Quintic smoothstep on [0, 1].
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Closed-form weight families on the sphere bundle.
///
/// Direction-dependent weights use the euclidean-normalized direction so they
/// are smooth functions of the phase state alone.
#[derive(Clone, Debug)]
pub enum WeightField {
    Constant(f64),
    /// Smooth radial cutoff in position: 1 inside `radius - width`, 0 outside
    /// `radius`.
    PositionBump {
        center: Vector,
        radius: f64,
        width: f64,
    },
    /// Indicator of a direction half space, `⟨v, axis⟩ > 0`.
    DirectionHalfSpace { axis: Vector },
    /// Vanishes on the band of directions nearly orthogonal to `axis`:
    /// ramps from 0 at `|cos ∠(v, axis)| = gap` to 1 at `gap + width`.
    DirectionBandGap {
        axis: Vector,
        gap: f64,
        width: f64,
    },
}

impl WeightField {
    pub fn eval(&self, s: &PhaseState) -> f64 {
        match self {
            WeightField::Constant(c) => *c,
            WeightField::PositionBump {
                center,
                radius,
                width,
            } => {
                let mut r2 = 0.0;
                for a in 0..3 {
                    let d = s.x.coords[a] - center[a];
                    r2 += d * d;
                }
                smoothstep((radius - r2.sqrt()) / width.max(1e-12))
            }
            WeightField::DirectionHalfSpace { axis } => {
                if linalg::dot(&s.v, axis, 3) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            WeightField::DirectionBandGap { axis, gap, width } => {
                let vn = linalg::dot(&s.v, &s.v, 3).sqrt();
                let an = linalg::dot(axis, axis, 3).sqrt();
                if vn == 0.0 || an == 0.0 {
                    return 0.0;
                }
                let c = linalg::dot(&s.v, axis, 3).abs() / (vn * an);
                smoothstep((c - gap) / width.max(1e-12))
            }
        }
    }

    /// All builtin families are nonnegative by construction when their
    /// parameters are; this checks the parameters.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            WeightField::Constant(c) => *c >= 0.0,
            _ => true,
        }
    }
}

/// Quadrature rule over the unit sphere of directions at a point: uniform in
/// angle for n = 2, a Fibonacci lattice for n = 3.
///
/// Nodes are coefficient vectors in a g-orthonormal frame, so the rule applies
/// at any base point once the frame is built there.
#[derive(Clone, Copy, Debug)]
pub struct SphereRule {
    pub dim: usize,
    pub count: usize,
}

impl SphereRule {
    pub fn new(dim: usize, count: usize) -> Self {
        SphereRule { dim, count }
    }

    /// (frame coefficients, quadrature weight) per node; weights sum to the
    /// sphere measure 2π (n=2) or 4π (n=3).
    pub fn nodes(&self) -> Vec<(Vector, f64)> {
        let mut out = Vec::with_capacity(self.count);
        match self.dim {
            2 => {
                let w = 2.0 * PI / self.count as f64;
                for k in 0..self.count {
                    let th = 2.0 * PI * (k as f64 + 0.5) / self.count as f64;
                    out.push(([th.cos(), th.sin(), 0.0], w));
                }
            }
            _ => {
                let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
                let w = 4.0 * PI / self.count as f64;
                for k in 0..self.count {
                    let i = k as f64 + 0.5;
                    let z = 1.0 - 2.0 * i / self.count as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = 2.0 * PI * i / golden;
                    out.push(([r * phi.cos(), r * phi.sin(), z], w));
                }
            }
        }
        out
    }
}

/// Discrete parameter grid on the inward boundary sphere bundle, cell-centered
/// along each axis, with resolved rays and Santaló quadrature weights.
///
/// Axes:
/// - n = 2: `(α, β)`, α ∈ [0, 2π) periodic, β ∈ (−β_max, β_max);
/// - n = 3: `(θ, φ, β, ψ)`, φ and ψ periodic, θ ∈ (0, π), β ∈ (0, β_max);
///
/// with `β_max = arccos(μ_min)`, so the grazing band is excluded.
#[derive(Debug)]
pub struct RayGrid {
    pub dim: usize,
    /// Nodes per axis (2(n−1) axes in use).
    pub shape: [usize; 4],
    /// Axis starts and cell widths.
    pub axis_start: [f64; 4],
    pub cell: [f64; 4],
    pub beta_max: f64,
    /// Flattened node parameters, first axis fastest.
    pub params: Vec<[f64; 4]>,
    pub rays: Vec<BoundaryRay>,
    /// Santaló quadrature weight per node: μ · (boundary area) · (fiber
    /// measure) · (cell volume).
    pub quad_w: Vec<f64>,
}

impl RayGrid {
    pub fn n_axes(&self) -> usize {
        2 * (self.dim - 1)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Build the standard grid. `n_boundary` nodes per boundary axis,
    /// `n_direction` per direction axis.
    pub fn build(
        metric: &MetricModel,
        domain: &DomainModel,
        n_boundary: usize,
        n_direction: usize,
        mu_min: f64,
    ) -> Result<Arc<RayGrid>> {
        let dim = metric.dim();
        let beta_max = mu_min.clamp(1e-12, 1.0).acos();
        let (shape, axis_start, cell) = match dim {
            2 => {
                let shape = [n_boundary, n_direction, 1, 1];
                let cell = [
                    2.0 * PI / n_boundary as f64,
                    2.0 * beta_max / n_direction as f64,
                    0.0,
                    0.0,
                ];
                (shape, [0.0, -beta_max, 0.0, 0.0], cell)
            }
            _ => {
                let shape = [n_boundary, 2 * n_boundary, n_direction, 2 * n_direction];
                let cell = [
                    PI / shape[0] as f64,
                    2.0 * PI / shape[1] as f64,
                    beta_max / shape[2] as f64,
                    2.0 * PI / shape[3] as f64,
                ];
                (shape, [0.0, 0.0, 0.0, 0.0], cell)
            }
        };
        let n_axes = 2 * (dim - 1);
        let total: usize = shape[..n_axes].iter().product();
        let chart = BoundaryChart::new(metric, domain);
        let mut params = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut p = [0.0; 4];
            for a in 0..n_axes {
                let i = rest % shape[a];
                rest /= shape[a];
                p[a] = axis_start[a] + (i as f64 + 0.5) * cell[a];
            }
            params.push(p);
        }
        let rays: Result<Vec<BoundaryRay>> =
            params.par_iter().map(|p| chart.ray_from_params(p)).collect();
        let rays = rays?;
        let cell_vol: f64 = cell[..n_axes].iter().product();
        let quad_w: Result<Vec<f64>> = params
            .par_iter()
            .map(|p| {
                let jac = chart.boundary_jacobian(&p[..dim - 1])?;
                let fiber = match dim {
                    2 => 1.0,
                    _ => p[2].sin(),
                };
                let mu = match dim {
                    2 => p[1].cos(),
                    _ => p[2].cos(),
                };
                Ok(jac * fiber * mu * cell_vol)
            })
            .collect();
        Ok(Arc::new(RayGrid {
            dim,
            shape,
            axis_start,
            cell,
            beta_max,
            params,
            rays,
            quad_w: quad_w?,
        }))
    }

    fn axis_periodic(&self, a: usize) -> bool {
        match self.dim {
            2 => a == 0,
            _ => a == 1 || a == 3,
        }
    }

    /// Multilinear interpolation of nodal values at arbitrary parameters,
    /// periodic in the angular axes and clamped along the rest.
    pub fn interp(&self, p: &[f64; 4], values: &[f64]) -> f64 {
        let n_axes = self.n_axes();
        let mut base = [0isize; 4];
        let mut frac = [0.0f64; 4];
        for a in 0..n_axes {
            let u = (p[a] - self.axis_start[a]) / self.cell[a] - 0.5;
            if self.axis_periodic(a) {
                let n = self.shape[a] as f64;
                let u = u.rem_euclid(n);
                base[a] = u.floor() as isize;
                frac[a] = u - base[a] as f64;
            } else {
                let max_base = self.shape[a] as isize - 2;
                let c = (u.floor() as isize).clamp(0, max_base.max(0));
                base[a] = c;
                frac[a] = (u - c as f64).clamp(0.0, 1.0);
            }
        }
        let corners = 1usize << n_axes;
        let mut acc = 0.0;
        for corner in 0..corners {
            let mut w = 1.0;
            let mut flat = 0usize;
            let mut stride = 1usize;
            for a in 0..n_axes {
                let hi = ((corner >> a) & 1) as isize;
                let mut idx = base[a] + hi;
                if self.axis_periodic(a) {
                    idx = idx.rem_euclid(self.shape[a] as isize);
                } else {
                    idx = idx.clamp(0, self.shape[a] as isize - 1);
                }
                w *= if hi == 1 { frac[a] } else { 1.0 - frac[a] };
                flat += idx as usize * stride;
                stride *= self.shape[a];
            }
            acc += w * values[flat];
        }
        acc
    }
}

/// Sampled function on the inward boundary sphere bundle together with its
/// Santaló weights (via the shared [`RayGrid`]).
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub grid: Arc<RayGrid>,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(grid: Arc<RayGrid>) -> Self {
        let n = grid.len();
        Sinogram {
            grid,
            values: vec![0.0; n],
        }
    }

    /// μ-weighted inner product over the boundary sphere bundle.
    pub fn mu_inner(&self, other: &Sinogram) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.grid.quad_w.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn mu_norm(&self) -> f64 {
        self.mu_inner(self).max(0.0).sqrt()
    }

    /// CSV dump: boundary params, direction params, μ_w, value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        match self.grid.dim {
            2 => writeln!(f, "alpha,beta,mu,value")?,
            _ => writeln!(f, "theta,phi,beta,psi,mu,value")?,
        }
        let n_axes = self.grid.n_axes();
        for (i, v) in self.values.iter().enumerate() {
            let p = &self.grid.params[i];
            for a in 0..n_axes {
                write!(f, "{:.17e},", p[a])?;
            }
            writeln!(f, "{:.17e},{:.17e}", self.grid.rays[i].mu, v)?;
        }
        Ok(())
    }
}

/// Per-node weights realizing the Riemannian volume on masked grid nodes:
/// `sqrt(det g(x_i)) · h^d`, zero off the mask.
pub fn volume_weights(m: &MetricModel, geom: &GridGeom, mask: &[bool]) -> Result<Vec<f64>> {
    let n = m.dim();
    let cell = geom.cell_volume();
    let mut out = vec![0.0; geom.len()];
    for (i, w) in out.iter_mut().enumerate() {
        if mask[i] {
            let g = m.metric_at(&geom.node_point(i))?;
            *w = linalg::det(&g, n).max(0.0).sqrt() * cell;
        }
    }
    Ok(out)
}

/// Riemannian volume of the domain by masked quadrature.
pub fn riemannian_volume(m: &MetricModel, d: &DomainModel, nodes_per_axis: usize) -> Result<f64> {
    let geom = GridGeom::centered(m.dim(), nodes_per_axis, 0.5 * d.chart_diameter() * 1.001);
    let mut total = 0.0;
    for i in 0..geom.len() {
        let p = geom.node_point(i);
        if d.contains(&p) {
            let g = m.metric_at(&p)?;
            total += linalg::det(&g, m.dim()).max(0.0).sqrt();
        }
    }
    Ok(total * geom.cell_volume())
}

/// Smooth random test field: a few seeded Gaussian bumps inside the domain.
pub fn random_smooth_field(
    rng: &mut impl rand::Rng,
    d: &DomainModel,
    n_bumps: usize,
) -> impl Fn(&crate::manifold::Point) -> f64 {
    let dim = d.dim();
    let r_max = 0.55 * d.chart_diameter() / 2.0;
    let mut bumps = Vec::with_capacity(n_bumps);
    for _ in 0..n_bumps {
        let mut c = [0.0; 3];
        for v in c.iter_mut().take(dim) {
            *v = rng.gen_range(-r_max..r_max);
        }
        let amp: f64 = rng.gen_range(-1.0..1.0);
        let sigma: f64 = rng.gen_range(0.08..0.25) * d.chart_diameter() / 2.0;
        bumps.push((c, amp, sigma));
    }
    move |x: &crate::manifold::Point| {
        let mut acc = 0.0;
        for (c, amp, sigma) in &bumps {
            let mut r2 = 0.0;
            for a in 0..dim {
                let dd = x.coords[a] - c[a];
                r2 += dd * dd;
            }
            acc += amp * (-0.5 * r2 / (sigma * sigma)).exp();
        }
        acc
    }
}

/// Smooth random function on the ray-grid parameters (low-order trig
/// polynomial in each axis).
pub fn random_smooth_sinogram(rng: &mut impl rand::Rng, grid: &Arc<RayGrid>) -> Sinogram {
    let n_axes = grid.n_axes();
    let mut coefs = Vec::new();
    for _ in 0..6 {
        let mut ks = [0i32; 4];
        let mut phases = [0.0f64; 4];
        for a in 0..n_axes {
            ks[a] = rng.gen_range(0..3);
            phases[a] = rng.gen_range(0.0..2.0 * PI);
        }
        let amp: f64 = rng.gen_range(-1.0..1.0);
        coefs.push((ks, phases, amp));
    }
    let values: Vec<f64> = grid
        .params
        .iter()
        .map(|p| {
            let mut acc = 0.0;
            for (ks, phases, amp) in &coefs {
                let mut term = *amp;
                for a in 0..n_axes {
                    term *= (ks[a] as f64 * p[a] + phases[a]).cos();
                }
                acc += term;
            }
            acc
        })
        .collect();
    Sinogram {
        grid: Arc::clone(grid),
        values,
    }
}

/// Validate that a weight satisfies the nonnegativity mode.
pub fn require_nonnegative(w: &WeightField) -> Result<()> {
    if w.is_nonnegative() {
        Ok(())
    } else {
        Err(Error::Numerics(
            "weight field must be nonnegative in this mode".into(),
        ))
    }
}
