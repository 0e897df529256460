//! Forward / adjoint / normal operators.
//!
//! The forward transform integrates `φ·f` along each ray of the grid by
//! composite midpoint quadrature at the flow step. The adjoint integrates
//! `φ(ν) h(F(ν))` over the direction sphere at each grid node. Both reuse
//! geometry caches: per-ray midpoint positions with folded weights, and a
//! per-(node, direction) footpoint table — rebuilding either is a function of
//! the geometry and weight only, never of the data.
//!
//! `forward_transpose_weighted` applies the exact transpose of the discrete
//! forward matrix (sequential scatter, deterministic), which the inversion
//! module uses to keep its normal equations exactly symmetric.

use std::sync::atomic::AtomicU64;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{BoundaryRay, FlowParams, GeodesicFlow, PhaseState};
use crate::grid::{GridGeom, ScalarGrid};
use crate::linalg::{self, Vector};
use crate::manifold::{DomainModel, MetricModel, Point};
use crate::xray::{RayGrid, Sinogram, SphereRule, WeightField};

/// Forward cache: midpoint positions and folded weights `φ(mid) · Δt`,
/// flattened across rays.
struct RayCache {
    offsets: Vec<u32>,
    pos: Vec<[f32; 3]>,
    w: Vec<f32>,
    tau: Vec<f64>,
}

/// Adjoint cache: per (masked node, sphere direction), the boundary-chart
/// parameters of the footpoint and the folded weight `φ(ν) · w_sphere`.
/// Dropped directions carry zero weight.
struct AdjCache {
    params: Vec<[f32; 4]>,
    w: Vec<f32>,
    dropped: u64,
}

/// Bound operator context: metric, domain, grids, weight and quadratures.
pub struct Projector<'a> {
    pub metric: &'a MetricModel,
    pub domain: &'a DomainModel,
    pub flow_params: FlowParams,
    pub weight: WeightField,
    pub ray_grid: Arc<RayGrid>,
    pub field_geom: GridGeom,
    pub sphere_rule: SphereRule,
    /// In-domain mask over the field grid.
    pub mask: Vec<bool>,
    masked: Vec<u32>,
    ray_cache: OnceLock<RayCache>,
    adj_cache: OnceLock<AdjCache>,
}

impl<'a> Projector<'a> {
    pub fn new(
        metric: &'a MetricModel,
        domain: &'a DomainModel,
        flow_params: FlowParams,
        weight: WeightField,
        ray_grid: Arc<RayGrid>,
        field_geom: GridGeom,
        sphere_rule: SphereRule,
    ) -> Self {
        let mask: Vec<bool> = (0..field_geom.len())
            .map(|i| domain.contains(&field_geom.node_point(i)))
            .collect();
        let masked = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i as u32)
            .collect();
        Projector {
            metric,
            domain,
            flow_params,
            weight,
            ray_grid,
            field_geom,
            sphere_rule,
            mask,
            masked,
            ray_cache: OnceLock::new(),
            adj_cache: OnceLock::new(),
        }
    }

    fn flow(&self) -> GeodesicFlow<'_> {
        GeodesicFlow::new(self.metric, self.domain, self.flow_params)
    }

    pub fn masked_nodes(&self) -> &[u32] {
        &self.masked
    }

    /// Fresh zero grid matching this projector's geometry and mask.
    pub fn zero_grid(&self) -> ScalarGrid {
        ScalarGrid {
            geom: self.field_geom,
            values: vec![0.0; self.field_geom.len()],
            mask: self.mask.clone(),
            off_mask_hits: AtomicU64::new(0),
        }
    }

    /// Walk a ray from a start state to the forward exit, visiting the
    /// midpoint of every quadrature interval. Returns τ_+.
    ///
    /// With a support hint `(center, radius)` the walk strides over the
    /// stretch where the integrand vanishes: the stride is bounded by half the
    /// remaining chart gap at the current chart speed, so it cannot jump into
    /// the support. No midpoints are visited while striding.
    fn walk_ray_support(
        &self,
        start: &PhaseState,
        support: Option<(&Vector, f64)>,
        mut visit: impl FnMut(&PhaseState, f64),
    ) -> Result<f64> {
        let flow = self.flow();
        let h = self.flow_params.step;
        let budget = self.flow_params.max_time_factor * self.domain.chart_diameter();
        let n = self.dim();
        let mut cur = PhaseState {
            x: start.x,
            v: self.metric.normalize(&start.x, &start.v)?,
        };
        let mut t = 0.0;
        let mut rho_prev = self.domain.rho(&cur.x).min(0.0);
        loop {
            if t > budget {
                return Err(Error::TrappedGeodesic { budget });
            }
            let mut dt = h;
            let mut skip = false;
            if let Some((c, r)) = support {
                let mut d2 = 0.0;
                for a in 0..n {
                    let d = cur.x.coords[a] - c[a];
                    d2 += d * d;
                }
                let gap = d2.sqrt() - r;
                if gap > h {
                    let speed = linalg::dot(&cur.v, &cur.v, n).sqrt().max(1e-9);
                    dt = (0.5 * gap / speed).clamp(h, 0.3);
                    skip = dt > h * 1.5;
                }
            }
            let next = flow.rk4_step(&cur, dt);
            if !next.x.is_finite(n) {
                return Err(Error::RangeExit("non-finite state on ray".into()));
            }
            let rho = self.domain.rho(&next.x);
            if rho > 0.0 && rho_prev <= 0.0 {
                let (dtc, _exit) = flow_polish(&flow, &cur, dt);
                if dtc > 1e-14 && !skip {
                    let mid = flow.rk4_step(&cur, 0.5 * dtc);
                    visit(&mid, dtc);
                }
                return Ok(t + dtc);
            }
            if rho >= self.flow_params.rho_pad {
                return Err(Error::RangeExit("ray left padded domain".into()));
            }
            if !skip {
                let mid = flow.rk4_step(&cur, 0.5 * dt);
                visit(&mid, dt);
            }
            cur = next;
            t += dt;
            rho_prev = rho;
        }
    }

    fn walk_ray(
        &self,
        start: &PhaseState,
        visit: impl FnMut(&PhaseState, f64),
    ) -> Result<f64> {
        self.walk_ray_support(start, None, visit)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn ray_cache(&self) -> Result<&RayCache> {
        if self.ray_cache.get().is_none() {
            let built = self.build_ray_cache()?;
            let _ = self.ray_cache.set(built);
        }
        Ok(self.ray_cache.get().expect("just set"))
    }

    fn build_ray_cache(&self) -> Result<RayCache> {
        struct PerRay {
            pos: Vec<[f32; 3]>,
            w: Vec<f32>,
            tau: f64,
        }
        let per_ray: Result<Vec<PerRay>> = self
            .ray_grid
            .rays
            .par_iter()
            .map(|ray| {
                let start = PhaseState::new(ray.point, ray.direction);
                let mut pos = Vec::new();
                let mut w = Vec::new();
                let tau = self.walk_ray(&start, |mid, dt| {
                    let phi = self.weight.eval(mid);
                    pos.push([
                        mid.x.coords[0] as f32,
                        mid.x.coords[1] as f32,
                        mid.x.coords[2] as f32,
                    ]);
                    w.push((phi * dt) as f32);
                })?;
                Ok(PerRay { pos, w, tau })
            })
            .collect();
        let per_ray = per_ray?;
        let mut offsets = Vec::with_capacity(per_ray.len() + 1);
        offsets.push(0u32);
        let total: usize = per_ray.iter().map(|r| r.pos.len()).sum();
        let mut pos = Vec::with_capacity(total);
        let mut w = Vec::with_capacity(total);
        let mut tau = Vec::with_capacity(per_ray.len());
        for r in per_ray {
            pos.extend_from_slice(&r.pos);
            w.extend_from_slice(&r.w);
            tau.push(r.tau);
            offsets.push(pos.len() as u32);
        }
        Ok(RayCache {
            offsets,
            pos,
            w,
            tau,
        })
    }

    /// Exit times of all grid rays (via the forward cache).
    pub fn ray_exit_times(&self) -> Result<&[f64]> {
        Ok(&self.ray_cache()?.tau)
    }

    /// Forward transform of a grid field over the standard ray grid.
    pub fn forward(&self, f: &ScalarGrid) -> Result<Sinogram> {
        assert_eq!(f.geom, self.field_geom, "field geometry mismatch");
        let cache = self.ray_cache()?;
        let values: Vec<f64> = (0..self.ray_grid.len())
            .into_par_iter()
            .map(|r| {
                let lo = cache.offsets[r] as usize;
                let hi = cache.offsets[r + 1] as usize;
                let mut acc = 0.0;
                for k in lo..hi {
                    acc += cache.w[k] as f64 * gather(f, &cache.pos[k]);
                }
                acc
            })
            .collect();
        Ok(Sinogram {
            grid: Arc::clone(&self.ray_grid),
            values,
        })
    }

    /// Forward transform along a single ray (no cache).
    pub fn forward_ray(&self, f: &ScalarGrid, ray: &BoundaryRay) -> Result<f64> {
        let start = PhaseState::new(ray.point, ray.direction);
        let mut acc = 0.0;
        self.walk_ray(&start, |mid, dt| {
            acc += self.weight.eval(mid) * f.interp(&mid.x) * dt;
        })?;
        Ok(acc)
    }

    /// Exact transpose of the discrete forward matrix applied to per-ray
    /// coefficients (callers fold in any sinogram weights first). Sequential
    /// scatter so the output is bit-deterministic.
    pub fn forward_transpose_weighted(&self, coeffs: &[f64]) -> Result<ScalarGrid> {
        let cache = self.ray_cache()?;
        let mut out = self.zero_grid();
        let mut idx = [0u32; 8];
        let mut sw = [0.0f64; 8];
        for r in 0..self.ray_grid.len() {
            let c = coeffs[r];
            if c == 0.0 {
                continue;
            }
            let lo = cache.offsets[r] as usize;
            let hi = cache.offsets[r + 1] as usize;
            for k in lo..hi {
                let m = stencil(
                    &self.field_geom,
                    &self.mask,
                    &cache.pos[k],
                    &mut idx,
                    &mut sw,
                );
                let cw = c * cache.w[k] as f64;
                for s in 0..m {
                    out.values[idx[s] as usize] += cw * sw[s];
                }
            }
        }
        Ok(out)
    }

    fn adj_cache(&self) -> Result<&AdjCache> {
        if self.adj_cache.get().is_none() {
            let built = self.build_adj_cache()?;
            let _ = self.adj_cache.set(built);
        }
        Ok(self.adj_cache.get().expect("just set"))
    }

    fn build_adj_cache(&self) -> Result<AdjCache> {
        let sphere = self.sphere_rule.nodes();
        let k = sphere.len();
        let flow = self.flow();
        let rows: Result<Vec<(Vec<[f32; 4]>, Vec<f32>, u64)>> = self
            .masked
            .par_iter()
            .map(|&node| {
                let x = self.field_geom.node_point(node as usize);
                if !self.domain.strictly_inside(&x) {
                    // nodes numerically on the boundary see a degenerate fan
                    return Ok((vec![[0.0; 4]; k], vec![0.0; k], k as u64));
                }
                let frame = self.metric.frame_at(&x)?;
                let mut params = Vec::with_capacity(k);
                let mut w = Vec::with_capacity(k);
                let mut dropped = 0u64;
                for (coef, ws) in &sphere {
                    let mut nu = linalg::ZERO_VEC;
                    for (i, e) in frame.iter().enumerate() {
                        linalg::axpy(&mut nu, coef[i], e, self.dim());
                    }
                    let phi = self.weight.eval(&PhaseState::new(x, nu));
                    match flow.footpoint(&PhaseState::new(x, nu)) {
                        Ok(ray) if ray.mu >= self.flow_params.mu_min => {
                            params.push([
                                ray.params[0] as f32,
                                ray.params[1] as f32,
                                ray.params[2] as f32,
                                ray.params[3] as f32,
                            ]);
                            w.push((phi * ws) as f32);
                        }
                        Ok(_) => {
                            params.push([0.0; 4]);
                            w.push(0.0);
                            dropped += 1;
                        }
                        Err(Error::TrappedGeodesic { .. }) | Err(Error::RangeExit(_)) => {
                            params.push([0.0; 4]);
                            w.push(0.0);
                            dropped += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Ok((params, w, dropped))
            })
            .collect();
        let rows = rows?;
        let mut params = Vec::with_capacity(self.masked.len() * k);
        let mut w = Vec::with_capacity(self.masked.len() * k);
        let mut dropped = 0;
        for (p, ws, d) in rows {
            params.extend_from_slice(&p);
            w.extend_from_slice(&ws);
            dropped += d;
        }
        Ok(AdjCache { params, w, dropped })
    }

    /// Number of (node, direction) pairs dropped into the grazing band while
    /// building the adjoint table.
    pub fn adjoint_dropped(&self) -> Result<u64> {
        Ok(self.adj_cache()?.dropped)
    }

    /// Adjoint under the Santaló measure: `X^t[h](x) = ∫_{S_xM} φ(ν) h(F(ν)) dS_x(ν)`.
    pub fn adjoint(&self, s: &Sinogram) -> Result<ScalarGrid> {
        let cache = self.adj_cache()?;
        let k = self.sphere_rule.count;
        let vals: Vec<f64> = self
            .masked
            .par_iter()
            .enumerate()
            .map(|(row, _)| {
                let base = row * k;
                let mut acc = 0.0;
                for j in 0..k {
                    let w = cache.w[base + j] as f64;
                    if w != 0.0 {
                        let p = &cache.params[base + j];
                        let pf = [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64];
                        acc += w * self.ray_grid.interp(&pf, &s.values);
                    }
                }
                acc
            })
            .collect();
        let mut out = self.zero_grid();
        for (row, &node) in self.masked.iter().enumerate() {
            out.values[node as usize] = vals[row];
        }
        Ok(out)
    }

    /// Normal operator as the composition adjoint ∘ forward on the standard
    /// grids.
    pub fn normal_composed(&self, f: &ScalarGrid) -> Result<ScalarGrid> {
        let sino = self.forward(f)?;
        self.adjoint(&sino)
    }

    /// Normal operator by the direct formula: sphere quadrature of full-line
    /// integrals of `φ·f` through each node. `subset` restricts evaluation to
    /// the given flat node indices (they must be masked).
    pub fn normal_direct(&self, f: &ScalarGrid, subset: Option<&[u32]>) -> Result<ScalarGrid> {
        let nodes: Vec<u32> = match subset {
            Some(s) => s.to_vec(),
            None => self.masked.clone(),
        };
        let sphere = self.sphere_rule.nodes();
        let vals: Result<Vec<f64>> = nodes
            .par_iter()
            .map(|&node| {
                let x = self.field_geom.node_point(node as usize);
                if !self.domain.strictly_inside(&x) {
                    return Ok(0.0);
                }
                let frame = self.metric.frame_at(&x)?;
                let mut acc = 0.0;
                for (coef, ws) in &sphere {
                    let mut nu = linalg::ZERO_VEC;
                    for (i, e) in frame.iter().enumerate() {
                        linalg::axpy(&mut nu, coef[i], e, self.dim());
                    }
                    let phi_out = self.weight.eval(&PhaseState::new(x, nu));
                    if phi_out == 0.0 {
                        continue;
                    }
                    let line = self.line_integral(f, &PhaseState::new(x, nu))?;
                    acc += ws * phi_out * line;
                }
                Ok(acc)
            })
            .collect();
        let vals = vals?;
        let mut out = self.zero_grid();
        for (i, &node) in nodes.iter().enumerate() {
            out.values[node as usize] = vals[i];
        }
        Ok(out)
    }

    /// Same as [`Projector::normal_direct`], with the field given analytically.
    /// Probe fields use this so the frequency ladder is not limited by the
    /// grid resolution.
    pub fn normal_direct_fn(
        &self,
        f: &(dyn Fn(&Point) -> f64 + Sync),
        nodes: &[u32],
        support: Option<(Vector, f64)>,
    ) -> Result<Vec<f64>> {
        let sphere = self.sphere_rule.nodes();
        nodes
            .par_iter()
            .map(|&node| {
                let x = self.field_geom.node_point(node as usize);
                if !self.domain.strictly_inside(&x) {
                    return Ok(0.0);
                }
                let frame = self.metric.frame_at(&x)?;
                let mut acc = 0.0;
                for (coef, ws) in &sphere {
                    let mut nu = linalg::ZERO_VEC;
                    for (i, e) in frame.iter().enumerate() {
                        linalg::axpy(&mut nu, coef[i], e, self.dim());
                    }
                    let phi_out = self.weight.eval(&PhaseState::new(x, nu));
                    if phi_out == 0.0 {
                        continue;
                    }
                    let line = self.line_integral_fn(f, &PhaseState::new(x, nu), &support)?;
                    acc += ws * phi_out * line;
                }
                Ok(acc)
            })
            .collect()
    }

    fn line_integral_fn(
        &self,
        f: &(dyn Fn(&Point) -> f64 + Sync),
        nu: &PhaseState,
        support: &Option<(Vector, f64)>,
    ) -> Result<f64> {
        let n = self.dim();
        let hint = support.as_ref().map(|(c, r)| (c, *r));
        let mut acc = 0.0;
        self.walk_ray_support(nu, hint, |mid, dt| {
            acc += self.weight.eval(mid) * f(&mid.x) * dt;
        })?;
        let rev = PhaseState {
            x: nu.x,
            v: linalg::scale(&nu.v, -1.0, n),
        };
        let hint = support.as_ref().map(|(c, r)| (c, *r));
        self.walk_ray_support(&rev, hint, |mid, dt| {
            let fwd_vel = PhaseState {
                x: mid.x,
                v: linalg::scale(&mid.v, -1.0, n),
            };
            acc += self.weight.eval(&fwd_vel) * f(&mid.x) * dt;
        })?;
        Ok(acc)
    }

    /// A cache-free copy with a different flow step (used by the probes to
    /// match the quadrature step to each frequency).
    pub fn probe_clone(&self, step: f64) -> Projector<'a> {
        Projector::new(
            self.metric,
            self.domain,
            self.flow_params.with_step(step),
            self.weight.clone(),
            Arc::clone(&self.ray_grid),
            self.field_geom,
            self.sphere_rule,
        )
    }

    /// `∫_{τ_-}^{τ_+} φ(γ̇_ν(s)) f(γ_ν(s)) ds` along the full geodesic through
    /// the given phase point.
    fn line_integral(&self, f: &ScalarGrid, nu: &PhaseState) -> Result<f64> {
        let n = self.dim();
        let mut acc = 0.0;
        // forward half
        self.walk_ray(nu, |mid, dt| {
            acc += self.weight.eval(mid) * f.interp(&mid.x) * dt;
        })?;
        // backward half: reverse the direction; the traversed states carry the
        // reversed velocity, so re-reverse it for the weight
        let rev = PhaseState {
            x: nu.x,
            v: linalg::scale(&nu.v, -1.0, n),
        };
        self.walk_ray(&rev, |mid, dt| {
            let fwd_vel = PhaseState {
                x: mid.x,
                v: linalg::scale(&mid.v, -1.0, n),
            };
            acc += self.weight.eval(&fwd_vel) * f.interp(&mid.x) * dt;
        })?;
        Ok(acc)
    }

    /// Phase-space intermediate operator:
    /// `h(ν) ↦ ∫_{τ_-}^{τ_+} χ(ν, γ̇_ν(s)) h(γ̇_ν(s)) ds` at each probe state.
    pub fn nsm_apply(
        &self,
        h: &dyn Fn(&PhaseState) -> f64,
        chi: &dyn Fn(&PhaseState, &PhaseState) -> f64,
        probes: &[NsmProbe],
    ) -> Result<Vec<f64>> {
        let n = self.dim();
        probes
            .iter()
            .map(|probe| {
                let nu = PhaseState::unit(self.metric, probe.x, &probe.v)?;
                let mut acc = 0.0;
                self.walk_ray(&nu, |mid, dt| {
                    acc += chi(&nu, mid) * h(mid) * dt;
                })?;
                let rev = PhaseState {
                    x: nu.x,
                    v: linalg::scale(&nu.v, -1.0, n),
                };
                self.walk_ray(&rev, |mid, dt| {
                    let fwd = PhaseState {
                        x: mid.x,
                        v: linalg::scale(&mid.v, -1.0, n),
                    };
                    acc += chi(&nu, &fwd) * h(&fwd) * dt;
                })?;
                Ok(acc)
            })
            .collect()
    }

    /// Santaló sanity total: quadrature of τ_+ against the Santaló measure,
    /// which must reproduce the Liouville volume of the sphere bundle.
    pub fn santalo_volume(&self) -> Result<f64> {
        let taus = self.ray_exit_times()?;
        Ok(taus
            .iter()
            .zip(self.ray_grid.quad_w.iter())
            .map(|(t, w)| t * w)
            .sum())
    }
}

/// Crossing polish shared with the trace logic (single-step secant on ρ).
fn flow_polish(flow: &GeodesicFlow, s: &PhaseState, dt: f64) -> (f64, PhaseState) {
    let tol = flow.domain.boundary_tol * crate::flow::domain_rho_scale(flow.domain);
    let mut a = 0.0;
    let mut fa = flow.domain.rho(&s.x);
    if fa > 0.0 {
        return (0.0, *s);
    }
    let mut b = dt;
    let outside = flow.rk4_step(s, dt);
    let mut fb = flow.domain.rho(&outside.x);
    let mut best = outside;
    let mut side = 0i32;
    for _ in 0..80 {
        let t = (a * fb - b * fa) / (fb - fa);
        let cand = flow.rk4_step(s, t);
        let ft = flow.domain.rho(&cand.x);
        best = cand;
        if ft.abs() <= tol {
            return (t, cand);
        }
        if ft > 0.0 {
            b = t;
            fb = ft;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = t;
            fa = ft;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    ((a + b) * 0.5, best)
}

/// A phase-space probe for [`Projector::nsm_apply`].
#[derive(Clone, Copy, Debug)]
pub struct NsmProbe {
    pub x: Point,
    pub v: Vector,
}

/// Multilinear gather replicating [`ScalarGrid::interp`] from an f32 position.
#[inline]
fn gather(f: &ScalarGrid, pos: &[f32; 3]) -> f64 {
    f.interp(&Point {
        coords: [pos[0] as f64, pos[1] as f64, pos[2] as f64],
    })
}

/// Stencil of in-mask corners and weights for a position; returns the count.
#[inline]
fn stencil(
    geom: &GridGeom,
    mask: &[bool],
    pos: &[f32; 3],
    idx_out: &mut [u32; 8],
    w_out: &mut [f64; 8],
) -> usize {
    let n = geom.nodes;
    let o = geom.origin();
    let inv_h = 1.0 / geom.spacing;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..geom.dim {
        let u = (pos[a] as f64 - o) * inv_h;
        if !(0.0..=(n - 1) as f64).contains(&u) {
            return 0;
        }
        let c = (u.floor() as usize).min(n - 2);
        base[a] = c;
        frac[a] = u - c as f64;
    }
    let corners = 1usize << geom.dim;
    let mut m = 0;
    for corner in 0..corners {
        let mut w = 1.0;
        let mut ijk = [0usize; 3];
        for a in 0..geom.dim {
            let hi = (corner >> a) & 1;
            ijk[a] = base[a] + hi;
            w *= if hi == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        let idx = geom.flat_index(ijk);
        if mask[idx] && w != 0.0 {
            idx_out[m] = idx as u32;
            w_out[m] = w;
            m += 1;
        }
    }
    m
}
