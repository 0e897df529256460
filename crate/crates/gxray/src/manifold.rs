//! Metric families on a single global chart and the pointwise geometric data
//! derived from them: metric tensor, Christoffel symbols, musical isomorphisms,
//! boundary normals and a sampled strict-convexity certificate.
//!
//! Every manifold here is a bounded Euclidean chart domain carrying a metric
//! field `g_ij(x)`. Derivatives of `g` are analytic per family; finite
//! differences appear only in tests as an oracle.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, MAX_DIM, ZERO_MAT, ZERO_VEC};

/// A chart point. The active dimension (2 or 3) comes from the metric/domain;
/// unused slots stay zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub coords: Vector,
}

impl Point {
    pub fn new2(x: f64, y: f64) -> Self {
        Point {
            coords: [x, y, 0.0],
        }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Point { coords: [x, y, z] }
    }

    pub fn from_slice(c: &[f64]) -> Self {
        let mut coords = ZERO_VEC;
        coords[..c.len()].copy_from_slice(c);
        Point { coords }
    }

    pub fn is_finite(&self, n: usize) -> bool {
        self.coords[..n].iter().all(|c| c.is_finite())
    }
}

/// A covector attached to a base point.
#[derive(Clone, Copy, Debug)]
pub struct Covector {
    pub base: Point,
    pub components: Vector,
}

/// Sum-of-Gaussians perturbation of a unit background sound speed.
#[derive(Clone, Debug)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub sigma: f64,
    pub center: Vector,
}

/// Scalar sound-speed families for conformal metrics `g_ij = c(x)^{-2} δ_ij`.
#[derive(Clone, Debug)]
pub enum SoundSpeed {
    /// Constant speed c ≡ c0.
    Uniform(f64),
    /// c(x) = 1 + Σ_j A_j exp(−|x−x0_j|² / (2σ_j²)).
    GaussianBumps(Vec<GaussianBump>),
    /// Stereographic patch of the round sphere of the given radius:
    /// c(x) = (R² + |x|²) / (2R²), i.e. g = 4R⁴/(R²+|x|²)² δ.
    SpherePatch { radius: f64 },
}

impl SoundSpeed {
    /// Value, gradient and Hessian of c at a chart point.
    pub fn eval(&self, x: &Vector, n: usize) -> (f64, Vector, Matrix) {
        match self {
            SoundSpeed::Uniform(c0) => (*c0, ZERO_VEC, ZERO_MAT),
            SoundSpeed::GaussianBumps(bumps) => {
                let mut c = 1.0;
                let mut grad = ZERO_VEC;
                let mut hess = ZERO_MAT;
                for b in bumps {
                    let inv_s2 = 1.0 / (b.sigma * b.sigma);
                    let mut r2 = 0.0;
                    let mut d = ZERO_VEC;
                    for k in 0..n {
                        d[k] = x[k] - b.center[k];
                        r2 += d[k] * d[k];
                    }
                    let e = b.amplitude * (-0.5 * r2 * inv_s2).exp();
                    c += e;
                    for k in 0..n {
                        grad[k] -= e * d[k] * inv_s2;
                        for l in 0..n {
                            hess[k][l] += e * (d[k] * d[l] * inv_s2 * inv_s2
                                - if k == l { inv_s2 } else { 0.0 });
                        }
                    }
                }
                (c, grad, hess)
            }
            SoundSpeed::SpherePatch { radius } => {
                let r2 = radius * radius;
                let mut c = r2;
                for k in 0..n {
                    c += x[k] * x[k];
                }
                c /= 2.0 * r2;
                let mut grad = ZERO_VEC;
                let mut hess = ZERO_MAT;
                for k in 0..n {
                    grad[k] = x[k] / r2;
                    hess[k][k] = 1.0 / r2;
                }
                (c, grad, hess)
            }
        }
    }
}

/// Callback-style metric for families not covered by the builtins.
///
/// Implementations must return the symmetric matrix field together with its
/// analytic first and second coordinate derivatives.
pub trait MetricField: Send + Sync {
    fn metric(&self, x: &Vector, n: usize) -> Matrix;
    /// `d[k][i][j] = ∂g_ij/∂x^k`
    fn metric_deriv(&self, x: &Vector, n: usize) -> [Matrix; MAX_DIM];
    /// `d2[k][l][i][j] = ∂²g_ij/∂x^k∂x^l`
    fn metric_deriv2(&self, x: &Vector, n: usize) -> [[Matrix; MAX_DIM]; MAX_DIM];
}

#[derive(Clone)]
pub enum MetricKind {
    Euclidean,
    Conformal(SoundSpeed),
    Custom(Arc<dyn MetricField>),
}

impl std::fmt::Debug for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Euclidean => write!(f, "Euclidean"),
            MetricKind::Conformal(s) => write!(f, "Conformal({s:?})"),
            MetricKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Metric tensor field on the chart, with analytic derivatives.
#[derive(Clone, Debug)]
pub struct MetricModel {
    dim: usize,
    kind: MetricKind,
    /// Points with |x| beyond this radius are rejected as outside the chart.
    validity_radius: f64,
}

impl MetricModel {
    pub fn new(dim: usize, kind: MetricKind) -> Self {
        assert!(dim == 2 || dim == 3, "chart dimension must be 2 or 3");
        MetricModel {
            dim,
            kind,
            validity_radius: f64::INFINITY,
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(dim, MetricKind::Euclidean)
    }

    pub fn conformal(dim: usize, speed: SoundSpeed) -> Self {
        Self::new(dim, MetricKind::Conformal(speed))
    }

    /// Stereographic round-sphere patch of the given radius.
    pub fn sphere_patch(dim: usize, radius: f64) -> Self {
        Self::new(dim, MetricKind::Conformal(SoundSpeed::SpherePatch { radius }))
    }

    pub fn with_validity_radius(mut self, r: f64) -> Self {
        self.validity_radius = r;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    fn check_point(&self, x: &Point) -> Result<()> {
        let n = self.dim;
        if !x.is_finite(n) {
            return Err(Error::outside(x.coords, "non-finite coordinates"));
        }
        let r2: f64 = x.coords[..n].iter().map(|c| c * c).sum();
        if r2.sqrt() > self.validity_radius {
            return Err(Error::outside(x.coords, "beyond metric validity radius"));
        }
        if let MetricKind::Conformal(s) = &self.kind {
            let (c, _, _) = s.eval(&x.coords, n);
            if c <= 0.0 {
                return Err(Error::outside(x.coords, "sound speed not positive"));
            }
        }
        Ok(())
    }

    /// Metric tensor g(x); symmetric positive definite on the valid chart.
    pub fn metric_at(&self, x: &Point) -> Result<Matrix> {
        self.check_point(x)?;
        Ok(self.metric_unchecked(&x.coords))
    }

    pub(crate) fn metric_unchecked(&self, x: &Vector) -> Matrix {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean => linalg::identity(n),
            MetricKind::Conformal(s) => {
                let (c, _, _) = s.eval(x, n);
                let w = 1.0 / (c * c);
                let mut g = ZERO_MAT;
                for i in 0..n {
                    g[i][i] = w;
                }
                g
            }
            MetricKind::Custom(f) => f.metric(x, n),
        }
    }

    /// First derivatives `∂g_ij/∂x^k`, indexed `[k][i][j]`.
    pub fn metric_deriv_at(&self, x: &Point) -> Result<[Matrix; MAX_DIM]> {
        self.check_point(x)?;
        Ok(self.metric_deriv_unchecked(&x.coords))
    }

    pub(crate) fn metric_deriv_unchecked(&self, x: &Vector) -> [Matrix; MAX_DIM] {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean => [ZERO_MAT; MAX_DIM],
            MetricKind::Conformal(s) => {
                let (c, dc, _) = s.eval(x, n);
                let f = -2.0 / (c * c * c);
                let mut out = [ZERO_MAT; MAX_DIM];
                for k in 0..n {
                    for i in 0..n {
                        out[k][i][i] = f * dc[k];
                    }
                }
                out
            }
            MetricKind::Custom(f) => f.metric_deriv(x, n),
        }
    }

    /// Second derivatives `∂²g_ij/∂x^k∂x^l`, indexed `[k][l][i][j]`.
    pub(crate) fn metric_deriv2_unchecked(&self, x: &Vector) -> [[Matrix; MAX_DIM]; MAX_DIM] {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean => [[ZERO_MAT; MAX_DIM]; MAX_DIM],
            MetricKind::Conformal(s) => {
                let (c, dc, d2c) = s.eval(x, n);
                let c3 = c * c * c;
                let c4 = c3 * c;
                let mut out = [[ZERO_MAT; MAX_DIM]; MAX_DIM];
                for k in 0..n {
                    for l in 0..n {
                        let v = 6.0 / c4 * dc[k] * dc[l] - 2.0 / c3 * d2c[k][l];
                        for i in 0..n {
                            out[k][l][i][i] = v;
                        }
                    }
                }
                out
            }
            MetricKind::Custom(f) => f.metric_deriv2(x, n),
        }
    }

    /// Christoffel symbols `Γ^k_ij`, symmetric in (i, j).
    pub fn christoffel_at(&self, x: &Point) -> Result<[Matrix; MAX_DIM]> {
        self.check_point(x)?;
        Ok(self.christoffel_unchecked(&x.coords))
    }

    pub(crate) fn christoffel_unchecked(&self, x: &Vector) -> [Matrix; MAX_DIM] {
        let n = self.dim;
        if matches!(self.kind, MetricKind::Euclidean) {
            return [ZERO_MAT; MAX_DIM];
        }
        let g = self.metric_unchecked(x);
        let ginv = linalg::inverse(&g, n).expect("metric must be invertible");
        let dg = self.metric_deriv_unchecked(x);
        let mut gamma = [ZERO_MAT; MAX_DIM];
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    let v = 0.5 * s;
                    gamma[k][i][j] = v;
                    gamma[k][j][i] = v;
                }
            }
        }
        gamma
    }

    /// Derivatives of the Christoffel symbols, `∂Γ^k_ij/∂x^m`, indexed `[m][k][i][j]`.
    ///
    /// Used by the variational (Jacobi) integration, which needs the
    /// linearization of the geodesic equation.
    pub(crate) fn christoffel_deriv_unchecked(&self, x: &Vector) -> [[Matrix; MAX_DIM]; MAX_DIM] {
        let n = self.dim;
        if matches!(self.kind, MetricKind::Euclidean) {
            return [[ZERO_MAT; MAX_DIM]; MAX_DIM];
        }
        let g = self.metric_unchecked(x);
        let ginv = linalg::inverse(&g, n).expect("metric must be invertible");
        let dg = self.metric_deriv_unchecked(x);
        let d2g = self.metric_deriv2_unchecked(x);
        // ∂g^{-1}/∂x^m = -g^{-1} (∂g/∂x^m) g^{-1}
        let mut dginv = [ZERO_MAT; MAX_DIM];
        for m in 0..n {
            let t = linalg::mat_mul(&ginv, &dg[m], n);
            let t = linalg::mat_mul(&t, &ginv, n);
            for i in 0..n {
                for j in 0..n {
                    dginv[m][i][j] = -t[i][j];
                }
            }
        }
        let mut out = [[ZERO_MAT; MAX_DIM]; MAX_DIM];
        for m in 0..n {
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let mut s = 0.0;
                        for l in 0..n {
                            let bracket = dg[i][l][j] + dg[j][l][i] - dg[l][i][j];
                            let dbracket =
                                d2g[m][i][l][j] + d2g[m][j][l][i] - d2g[m][l][i][j];
                            s += dginv[m][k][l] * bracket + ginv[k][l] * dbracket;
                        }
                        let v = 0.5 * s;
                        out[m][k][i][j] = v;
                        out[m][k][j][i] = v;
                    }
                }
            }
        }
        out
    }

    /// Lower an index: vector -> covector at x.
    pub fn flat(&self, x: &Point, v: &Vector) -> Result<Covector> {
        let g = self.metric_at(x)?;
        Ok(Covector {
            base: *x,
            components: linalg::mat_vec(&g, v, self.dim),
        })
    }

    /// Raise an index: covector -> vector at x.
    pub fn sharp(&self, eta: &Covector) -> Result<Vector> {
        let g = self.metric_at(&eta.base)?;
        let ginv = linalg::inverse(&g, self.dim).expect("metric must be invertible");
        Ok(linalg::mat_vec(&ginv, &eta.components, self.dim))
    }

    pub fn dot(&self, x: &Point, a: &Vector, b: &Vector) -> Result<f64> {
        let g = self.metric_at(x)?;
        Ok(linalg::dot_g(&g, a, b, self.dim))
    }

    pub fn norm(&self, x: &Point, a: &Vector) -> Result<f64> {
        Ok(self.dot(x, a, a)?.max(0.0).sqrt())
    }

    /// Rescale a vector to unit g-length.
    pub fn normalize(&self, x: &Point, a: &Vector) -> Result<Vector> {
        let nrm = self.norm(x, a)?;
        if nrm <= 0.0 {
            return Err(Error::Numerics("cannot normalize a zero vector".into()));
        }
        Ok(linalg::scale(a, 1.0 / nrm, self.dim))
    }

    /// g-orthonormal frame at x obtained by Gram-Schmidt of the coordinate basis.
    pub fn frame_at(&self, x: &Point) -> Result<Vec<Vector>> {
        let g = self.metric_at(x)?;
        let mut seeds = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let mut e = ZERO_VEC;
            e[i] = 1.0;
            seeds.push(e);
        }
        Ok(linalg::gram_schmidt_g(&seeds, &g, self.dim))
    }

    /// g-orthonormal frame whose first vector is the given unit vector.
    pub fn frame_adapted(&self, x: &Point, first: &Vector) -> Result<Vec<Vector>> {
        let g = self.metric_at(x)?;
        let n = self.dim;
        let mut seeds = vec![*first];
        // Complete with the coordinate directions least aligned with `first`.
        let mut axes: Vec<usize> = (0..n).collect();
        axes.sort_by(|&a, &b| {
            first[a]
                .abs()
                .partial_cmp(&first[b].abs())
                .expect("finite components")
        });
        for &a in axes.iter().take(n - 1) {
            let mut e = ZERO_VEC;
            e[a] = 1.0;
            seeds.push(e);
        }
        Ok(linalg::gram_schmidt_g(&seeds, &g, n))
    }
}

/// Builtin strictly convex chart domains.
#[derive(Clone, Debug)]
pub enum DomainShape {
    Disk { radius: f64 },
    Ball { radius: f64 },
    Ellipse { a: f64, b: f64 },
}

/// Chart domain `{ρ < 0}` with smooth boundary `{ρ = 0}`.
#[derive(Clone, Debug)]
pub struct DomainModel {
    pub shape: DomainShape,
    pub boundary_tol: f64,
}

impl DomainModel {
    pub fn new(shape: DomainShape) -> Self {
        DomainModel {
            shape,
            boundary_tol: 1e-9,
        }
    }

    pub fn disk(radius: f64) -> Self {
        Self::new(DomainShape::Disk { radius })
    }

    pub fn ball(radius: f64) -> Self {
        Self::new(DomainShape::Ball { radius })
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        Self::new(DomainShape::Ellipse { a, b })
    }

    pub fn with_boundary_tol(mut self, tol: f64) -> Self {
        self.boundary_tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        match self.shape {
            DomainShape::Disk { .. } | DomainShape::Ellipse { .. } => 2,
            DomainShape::Ball { .. } => 3,
        }
    }

    /// Defining function; negative inside, zero on the boundary.
    pub fn rho(&self, x: &Point) -> f64 {
        let c = &x.coords;
        match self.shape {
            DomainShape::Disk { radius } | DomainShape::Ball { radius } => {
                let n = self.dim();
                let r2: f64 = c[..n].iter().map(|v| v * v).sum();
                0.5 * (r2 - radius * radius)
            }
            DomainShape::Ellipse { a, b } => {
                0.5 * (c[0] * c[0] / (a * a) + c[1] * c[1] / (b * b) - 1.0)
            }
        }
    }

    pub fn grad_rho(&self, x: &Point) -> Vector {
        let c = &x.coords;
        let mut g = ZERO_VEC;
        match self.shape {
            DomainShape::Disk { .. } | DomainShape::Ball { .. } => {
                for i in 0..self.dim() {
                    g[i] = c[i];
                }
            }
            DomainShape::Ellipse { a, b } => {
                g[0] = c[0] / (a * a);
                g[1] = c[1] / (b * b);
            }
        }
        g
    }

    pub fn hess_rho(&self, _x: &Point) -> Matrix {
        let mut h = ZERO_MAT;
        match self.shape {
            DomainShape::Disk { .. } | DomainShape::Ball { .. } => {
                for i in 0..self.dim() {
                    h[i][i] = 1.0;
                }
            }
            DomainShape::Ellipse { a, b } => {
                h[0][0] = 1.0 / (a * a);
                h[1][1] = 1.0 / (b * b);
            }
        }
        h
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.rho(x) <= 0.0
    }

    pub fn strictly_inside(&self, x: &Point) -> bool {
        self.rho(x) < -self.boundary_tol
    }

    pub fn on_boundary(&self, x: &Point) -> bool {
        self.rho(x).abs() <= self.boundary_tol * self.boundary_scale()
    }

    /// Scale factor making the boundary tolerance comparable across shapes:
    /// |∇ρ| ~ radius near the boundary for the builtin shapes.
    fn boundary_scale(&self) -> f64 {
        match self.shape {
            DomainShape::Disk { radius } | DomainShape::Ball { radius } => radius,
            DomainShape::Ellipse { a, b } => a.max(b),
        }
    }

    /// Euclidean chart diameter, used for integration budgets.
    pub fn chart_diameter(&self) -> f64 {
        match self.shape {
            DomainShape::Disk { radius } | DomainShape::Ball { radius } => 2.0 * radius,
            DomainShape::Ellipse { a, b } => 2.0 * a.max(b),
        }
    }

    /// Axis-aligned chart bounding box half-widths.
    pub fn bbox_half_widths(&self) -> Vector {
        let mut h = ZERO_VEC;
        match self.shape {
            DomainShape::Disk { radius } => {
                h[0] = radius;
                h[1] = radius;
            }
            DomainShape::Ball { radius } => {
                h[0] = radius;
                h[1] = radius;
                h[2] = radius;
            }
            DomainShape::Ellipse { a, b } => {
                h[0] = a;
                h[1] = b;
            }
        }
        h
    }

    /// Outward g-unit normal at a boundary point.
    pub fn boundary_normal(&self, m: &MetricModel, x: &Point) -> Result<Vector> {
        let rho = self.rho(x);
        let tol = self.boundary_tol * self.boundary_scale();
        if rho.abs() > tol {
            return Err(Error::NotOnBoundary { rho, tol });
        }
        let grad = self.grad_rho(x);
        // Raise the index so the normal is g-orthogonal to the boundary,
        // then normalize in g.
        let sharp = m.sharp(&Covector {
            base: *x,
            components: grad,
        })?;
        m.normalize(x, &sharp)
    }

    /// Sampled strict-convexity certificate: checks that the second fundamental
    /// form of the boundary with respect to g is positive definite at `samples`
    /// boundary points. Returns the minimal value seen.
    pub fn convexity_certificate(&self, m: &MetricModel, samples: usize) -> Result<f64> {
        let n = self.dim();
        let mut min_ii = f64::INFINITY;
        let total = if n == 2 { samples } else { samples };
        for idx in 0..total {
            let x = self.boundary_point_by_index(idx, total);
            let g = m.metric_at(&x)?;
            let gamma = m.christoffel_unchecked(&x.coords);
            let grad = self.grad_rho(&x);
            let hess = self.hess_rho(&x);
            let grad_norm = {
                let sharp = m.sharp(&Covector {
                    base: x,
                    components: grad,
                })?;
                linalg::dot(&grad, &sharp, n).sqrt()
            };
            let nu = self.boundary_normal(m, &x)?;
            // g-orthonormal tangent frame at the boundary point
            let frame = m.frame_adapted(&x, &nu)?;
            for t in frame.iter().skip(1) {
                // covariant Hessian of ρ applied to (t, t)
                let mut v = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let mut corr = 0.0;
                        for k in 0..n {
                            corr += gamma[k][i][j] * grad[k];
                        }
                        v += (hess[i][j] - corr) * t[i] * t[j];
                    }
                }
                let ii = v / grad_norm;
                if ii < min_ii {
                    min_ii = ii;
                }
            }
            let _ = g;
        }
        Ok(min_ii)
    }

    /// Deterministic boundary sample used by the certificate.
    fn boundary_point_by_index(&self, idx: usize, total: usize) -> Point {
        match self.shape {
            DomainShape::Disk { radius } => {
                let t = 2.0 * std::f64::consts::PI * (idx as f64 + 0.5) / total as f64;
                Point::new2(radius * t.cos(), radius * t.sin())
            }
            DomainShape::Ellipse { a, b } => {
                let t = 2.0 * std::f64::consts::PI * (idx as f64 + 0.5) / total as f64;
                Point::new2(a * t.cos(), b * t.sin())
            }
            DomainShape::Ball { radius } => {
                // Fibonacci lattice on the sphere
                let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
                let i = idx as f64 + 0.5;
                let z = 1.0 - 2.0 * i / total as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = 2.0 * std::f64::consts::PI * i / golden;
                Point::new3(radius * r * phi.cos(), radius * r * phi.sin(), radius * z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens_metric() -> MetricModel {
        MetricModel::conformal(
            2,
            SoundSpeed::GaussianBumps(vec![GaussianBump {
                amplitude: 0.3,
                sigma: 0.25,
                center: ZERO_VEC,
            }]),
        )
    }

    #[test]
    fn euclidean_metric_is_identity() {
        let m = MetricModel::euclidean(2);
        let g = m.metric_at(&Point::new2(0.3, -0.7)).unwrap();
        assert_eq!(g[0][0], 1.0);
        assert_eq!(g[1][1], 1.0);
        assert_eq!(g[0][1], 0.0);
    }

    #[test]
    fn constant_speed_two_gives_quarter_identity() {
        let m = MetricModel::conformal(2, SoundSpeed::Uniform(2.0));
        let g = m.metric_at(&Point::new2(0.1, 0.2)).unwrap();
        assert!((g[0][0] - 0.25).abs() < 1e-15);
        assert!((g[1][1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gaussian_lens_matches_closed_form() {
        // independent closed-form evaluation of c(x)^{-2} at x = (0.1, 0)
        let m = lens_metric();
        let g = m.metric_at(&Point::new2(0.1, 0.0)).unwrap();
        let c = 1.0 + 0.3 * (-0.5 * (0.1_f64 * 0.1) / (0.25 * 0.25)).exp();
        let expect = 1.0 / (c * c);
        assert!((g[0][0] - expect).abs() < 1e-15);
        assert!((g[1][1] - expect).abs() < 1e-15);
        assert_eq!(g[0][1], 0.0);
    }

    #[test]
    fn euclidean_christoffels_vanish() {
        let m = MetricModel::euclidean(3);
        let gamma = m.christoffel_at(&Point::new3(0.2, 0.1, -0.4)).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(gamma[k][i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn sphere_patch_christoffels_vanish_at_origin() {
        // the conformal factor has a critical point at the chart origin
        let m = MetricModel::sphere_patch(2, 1.0);
        let gamma = m.christoffel_at(&Point::new2(0.0, 0.0)).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!(gamma[k][i][j].abs() < 1e-15);
                }
            }
        }
    }

    /// Central finite differences of `metric_at` as an oracle for the analytic
    /// Christoffel symbols.
    fn christoffel_fd(m: &MetricModel, x: &Point, step: f64) -> [Matrix; MAX_DIM] {
        let n = m.dim();
        let g = m.metric_unchecked(&x.coords);
        let ginv = linalg::inverse(&g, n).unwrap();
        let mut dg = [ZERO_MAT; MAX_DIM];
        for k in 0..n {
            let mut xp = x.coords;
            let mut xm = x.coords;
            xp[k] += step;
            xm[k] -= step;
            let gp = m.metric_unchecked(&xp);
            let gm = m.metric_unchecked(&xm);
            for i in 0..n {
                for j in 0..n {
                    dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * step);
                }
            }
        }
        let mut gamma = [ZERO_MAT; MAX_DIM];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[k][l] * (dg[i][l][j] + dg[j][l][i] - dg[l][i][j]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        gamma
    }

    #[test]
    fn christoffel_agrees_with_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let families = [
            lens_metric(),
            MetricModel::sphere_patch(2, 1.0),
            MetricModel::conformal(
                3,
                SoundSpeed::GaussianBumps(vec![GaussianBump {
                    amplitude: 0.4,
                    sigma: 0.3,
                    center: [0.1, 0.0, -0.05],
                }]),
            ),
        ];
        for m in &families {
            let n = m.dim();
            for _ in 0..1000 {
                let mut c = ZERO_VEC;
                for v in c.iter_mut().take(n) {
                    *v = rng.gen_range(-0.6..0.6);
                }
                let x = Point { coords: c };
                let exact = m.christoffel_at(&x).unwrap();
                let fd = christoffel_fd(m, &x, 1e-5);
                let mut max_mag = 0.0_f64;
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            max_mag = max_mag.max(exact[k][i][j].abs());
                        }
                    }
                }
                let scale = max_mag.max(1e-3);
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let err = (exact[k][i][j] - fd[k][i][j]).abs() / scale;
                            assert!(
                                err < 1e-6,
                                "Christoffel mismatch err={err:.3e} at {:?}",
                                x.coords
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn christoffel_deriv_agrees_with_finite_differences() {
        let m = lens_metric();
        let x = Point::new2(0.15, -0.2);
        let exact = m.christoffel_deriv_unchecked(&x.coords);
        let step = 1e-5;
        for mu in 0..2 {
            let mut xp = x.coords;
            let mut xm = x.coords;
            xp[mu] += step;
            xm[mu] -= step;
            let gp = m.christoffel_unchecked(&xp);
            let gm = m.christoffel_unchecked(&xm);
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let fd = (gp[k][i][j] - gm[k][i][j]) / (2.0 * step);
                        assert!(
                            (exact[mu][k][i][j] - fd).abs() < 1e-6,
                            "dGamma mismatch"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn metric_is_spd_at_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let families = [
            MetricModel::euclidean(2),
            lens_metric(),
            MetricModel::sphere_patch(2, 1.0),
            MetricModel::conformal(3, SoundSpeed::Uniform(1.5)),
        ];
        for m in &families {
            let n = m.dim();
            for _ in 0..10_000 {
                let mut c = ZERO_VEC;
                for v in c.iter_mut().take(n) {
                    *v = rng.gen_range(-0.9..0.9);
                }
                let g = m.metric_at(&Point { coords: c }).unwrap();
                assert!(linalg::is_spd(&g, n));
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(g[i][j], g[j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn flat_sharp_euclidean_and_constant_speed() {
        let m = MetricModel::euclidean(2);
        let eta = m.flat(&Point::new2(0.0, 0.0), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(eta.components[0], 1.0);
        assert_eq!(eta.components[1], 0.0);

        let m2 = MetricModel::conformal(2, SoundSpeed::Uniform(2.0));
        let eta2 = m2.flat(&Point::new2(0.3, 0.1), &[1.0, 0.0, 0.0]).unwrap();
        assert!((eta2.components[0] - 0.25).abs() < 1e-15);
        assert!(eta2.components[1].abs() < 1e-15);
    }

    #[test]
    fn flat_sharp_roundtrip_is_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = lens_metric();
        for _ in 0..200 {
            let x = Point::new2(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0];
            let eta = m.flat(&x, &v).unwrap();
            let back = m.sharp(&eta).unwrap();
            for i in 0..2 {
                assert!((back[i] - v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boundary_normal_unit_disk() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let nu = d.boundary_normal(&m, &Point::new2(1.0, 0.0)).unwrap();
        assert!((nu[0] - 1.0).abs() < 1e-12);
        assert!(nu[1].abs() < 1e-12);
    }

    #[test]
    fn boundary_normal_constant_speed_scales() {
        // with g = c^{-2} δ and constant c, the g-unit normal has euclidean
        // length c
        let c0 = 1.7;
        let m = MetricModel::conformal(2, SoundSpeed::Uniform(c0));
        let d = DomainModel::disk(1.0);
        let nu = d.boundary_normal(&m, &Point::new2(0.0, 1.0)).unwrap();
        assert!(nu[0].abs() < 1e-12);
        assert!((nu[1] - c0).abs() < 1e-12);
    }

    #[test]
    fn boundary_normal_off_boundary_is_error() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        assert!(d.boundary_normal(&m, &Point::new2(0.5, 0.0)).is_err());
    }

    #[test]
    fn ellipse_normal_has_unit_g_norm() {
        let m = lens_metric();
        let d = DomainModel::ellipse(1.0, 0.7);
        for k in 0..32 {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 32.0;
            let x = Point::new2(t.cos(), 0.7 * t.sin());
            let nu = d.boundary_normal(&m, &x).unwrap();
            assert!((m.norm(&x, &nu).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn builtin_domains_pass_convexity_certificate() {
        let cases: Vec<(MetricModel, DomainModel)> = vec![
            (MetricModel::euclidean(2), DomainModel::disk(1.0)),
            (MetricModel::euclidean(3), DomainModel::ball(1.0)),
            (MetricModel::euclidean(2), DomainModel::ellipse(1.0, 0.6)),
            (lens_metric(), DomainModel::disk(1.0)),
        ];
        for (m, d) in &cases {
            let min_ii = d.convexity_certificate(m, 1000).unwrap();
            assert!(min_ii > 0.0, "certificate failed: min II = {min_ii}");
        }
    }
}
