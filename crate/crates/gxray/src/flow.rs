//! Geodesic flow on the unit sphere bundle: fixed-step RK4 integration of the
//! geodesic equation, exit times to the boundary, the footpoint map onto
//! inward boundary rays, and the exponential map.
//!
//! Exit detection integrates in the slightly enlarged region `{ρ < ρ_pad}`,
//! brackets the sign change of ρ along the trace and polishes the crossing
//! with an Illinois-type secant iteration. Grazing rays (small Santaló weight)
//! are excluded by callers via `mu_min`.

use crate::error::{Error, Result};
use crate::linalg::{self, Vector, ZERO_VEC};
use crate::manifold::{DomainModel, DomainShape, MetricModel, Point};

/// A point of the unit sphere bundle: chart position plus g-unit vector.
#[derive(Clone, Copy, Debug)]
pub struct PhaseState {
    pub x: Point,
    pub v: Vector,
}

impl PhaseState {
    pub fn new(x: Point, v: Vector) -> Self {
        PhaseState { x, v }
    }

    /// Construct with the direction rescaled to unit g-length.
    pub fn unit(m: &MetricModel, x: Point, v: &Vector) -> Result<Self> {
        Ok(PhaseState {
            x,
            v: m.normalize(&x, v)?,
        })
    }
}

/// An inward-pointing unit vector at the boundary together with its Santaló
/// weight and its chart parameters on the inward boundary sphere bundle.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryRay {
    pub point: Point,
    /// Inward g-unit direction.
    pub direction: Vector,
    /// Santaló weight μ_w = −⟨w, ν_+⟩_g > 0.
    pub mu: f64,
    /// Chart parameters (boundary parameters, then direction angles);
    /// `2(n-1)` slots are meaningful.
    pub params: [f64; 4],
}

/// Samples of one maximal geodesic from its start to the forward exit.
#[derive(Clone, Debug)]
pub struct GeodesicTrace {
    /// Sample times `t_0 = 0 < ... < t_N = τ_+`.
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    /// Whether the first sample lies on the boundary.
    pub starts_on_boundary: bool,
    /// Whether the last sample lies on the boundary (forward exit found).
    pub ends_on_boundary: bool,
}

impl GeodesicTrace {
    pub fn exit_time(&self) -> f64 {
        *self.times.last().expect("trace is nonempty")
    }

    pub fn start(&self) -> &PhaseState {
        &self.states[0]
    }

    pub fn end(&self) -> &PhaseState {
        self.states.last().expect("trace is nonempty")
    }

    /// State at an arbitrary time in `[0, τ_+]`, re-integrated from the
    /// nearest stored sample (deterministic, step-bounded).
    pub fn state_at(&self, flow: &GeodesicFlow, t: f64) -> PhaseState {
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times"))
        {
            Ok(i) => return self.states[i],
            Err(i) => i.saturating_sub(1),
        };
        let mut s = self.states[idx];
        let mut remaining = t - self.times[idx];
        let h = flow.params.step;
        while remaining > 1e-14 {
            let dt = remaining.min(h);
            s = flow.rk4_step(&s, dt);
            remaining -= dt;
        }
        s
    }
}

/// Flow tolerances and step control.
#[derive(Clone, Copy, Debug)]
pub struct FlowParams {
    /// RK4 step size.
    pub step: f64,
    /// Extended-domain margin for exit detection, in units of ρ.
    pub rho_pad: f64,
    /// Grazing cutoff on the Santaló weight.
    pub mu_min: f64,
    /// Unit-speed tolerance for phase states.
    pub unit_speed_tol: f64,
    /// Trapped-ray budget as a multiple of the chart diameter.
    pub max_time_factor: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            step: 0.005,
            rho_pad: 0.05,
            mu_min: 1e-3,
            unit_speed_tol: 1e-8,
            max_time_factor: 50.0,
        }
    }
}

impl FlowParams {
    pub fn with_step(mut self, h: f64) -> Self {
        self.step = h;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Geodesic flow of a metric on a domain.
pub struct GeodesicFlow<'a> {
    pub metric: &'a MetricModel,
    pub domain: &'a DomainModel,
    pub params: FlowParams,
}

impl<'a> GeodesicFlow<'a> {
    pub fn new(metric: &'a MetricModel, domain: &'a DomainModel, params: FlowParams) -> Self {
        assert_eq!(
            metric.dim(),
            domain.dim(),
            "metric/domain dimension mismatch"
        );
        GeodesicFlow {
            metric,
            domain,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn time_budget(&self) -> f64 {
        self.params.max_time_factor * self.domain.chart_diameter()
    }

    /// Right-hand side of the geodesic equation `ẍ^k = −Γ^k_ij ẋ^i ẋ^j`.
    #[inline]
    fn rhs(&self, x: &Vector, v: &Vector, dx: &mut Vector, dv: &mut Vector) {
        let n = self.dim();
        let gamma = self.metric.christoffel_unchecked(x);
        for k in 0..n {
            dx[k] = v[k];
            let mut a = 0.0;
            for i in 0..n {
                for j in 0..n {
                    a += gamma[k][i][j] * v[i] * v[j];
                }
            }
            dv[k] = -a;
        }
    }

    /// One classical RK4 step of size `dt` (no renormalization).
    pub(crate) fn rk4_step(&self, s: &PhaseState, dt: f64) -> PhaseState {
        let n = self.dim();
        let (mut k1x, mut k1v) = (ZERO_VEC, ZERO_VEC);
        let (mut k2x, mut k2v) = (ZERO_VEC, ZERO_VEC);
        let (mut k3x, mut k3v) = (ZERO_VEC, ZERO_VEC);
        let (mut k4x, mut k4v) = (ZERO_VEC, ZERO_VEC);
        let x0 = s.x.coords;
        let v0 = s.v;

        self.rhs(&x0, &v0, &mut k1x, &mut k1v);
        let mut x1 = x0;
        let mut v1 = v0;
        linalg::axpy(&mut x1, 0.5 * dt, &k1x, n);
        linalg::axpy(&mut v1, 0.5 * dt, &k1v, n);
        self.rhs(&x1, &v1, &mut k2x, &mut k2v);
        let mut x2 = x0;
        let mut v2 = v0;
        linalg::axpy(&mut x2, 0.5 * dt, &k2x, n);
        linalg::axpy(&mut v2, 0.5 * dt, &k2v, n);
        self.rhs(&x2, &v2, &mut k3x, &mut k3v);
        let mut x3 = x0;
        let mut v3 = v0;
        linalg::axpy(&mut x3, dt, &k3x, n);
        linalg::axpy(&mut v3, dt, &k3v, n);
        self.rhs(&x3, &v3, &mut k4x, &mut k4v);

        let mut x = x0;
        let mut v = v0;
        let w = dt / 6.0;
        for i in 0..n {
            x[i] += w * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += w * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        PhaseState {
            x: Point { coords: x },
            v,
        }
    }

    /// Advance one step and renormalize to unit g-speed.
    ///
    /// Errors when the step leaves the padded domain `{ρ < ρ_pad}`.
    pub fn flow_step(&self, s: &PhaseState, dt: f64) -> Result<PhaseState> {
        let stepped = self.rk4_step(s, dt);
        if !stepped.x.is_finite(self.dim()) {
            return Err(Error::RangeExit("non-finite state after step".into()));
        }
        let rho = self.domain.rho(&stepped.x);
        if rho >= self.params.rho_pad {
            return Err(Error::RangeExit(format!(
                "step left the padded domain (rho = {rho:.3e})"
            )));
        }
        Ok(PhaseState {
            x: stepped.x,
            v: self.metric.normalize(&stepped.x, &stepped.v)?,
        })
    }

    /// Polish a boundary crossing bracketed between `s` (inside, ρ ≤ 0) and a
    /// single step of size `dt` (outside, ρ > 0). Returns (crossing offset,
    /// state at the crossing).
    fn polish_crossing(&self, s: &PhaseState, dt: f64) -> (f64, PhaseState) {
        let tol = self.domain.boundary_tol * domain_rho_scale(self.domain);
        let mut a = 0.0;
        let mut fa = self.domain.rho(&s.x);
        let mut b = dt;
        let outside = self.rk4_step(s, dt);
        let mut fb = self.domain.rho(&outside.x);
        if fa > 0.0 {
            // start already (numerically) outside; clamp to the start
            return (0.0, *s);
        }
        let mut best = outside;
        // Illinois secant: keeps a bracket, superlinear on smooth ρ
        let mut side = 0i32;
        for _ in 0..80 {
            let t = (a * fb - b * fa) / (fb - fa);
            let cand = self.rk4_step(s, t);
            let ft = self.domain.rho(&cand.x);
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

    /// Integrate forward to the boundary, sampling every `step`. The final
    /// sample is the polished exit state at `t_N = τ_+`.
    pub fn trace(&self, start: &PhaseState) -> Result<GeodesicTrace> {
        self.trace_impl(start, None)
    }

    /// Like [`GeodesicFlow::trace`], but stops sampling at `t_stop` if the
    /// geodesic has not exited by then (used for interior segments).
    pub fn trace_until(&self, start: &PhaseState, t_stop: f64) -> Result<GeodesicTrace> {
        self.trace_impl(start, Some(t_stop))
    }

    fn trace_impl(&self, start: &PhaseState, t_stop: Option<f64>) -> Result<GeodesicTrace> {
        let h = self.params.step;
        let budget = self.time_budget();
        let n = self.dim();
        let start = PhaseState {
            x: start.x,
            v: self.metric.normalize(&start.x, &start.v)?,
        };
        let rho0 = self.domain.rho(&start.x);
        if rho0 > domain_rho_scale(self.domain) * self.domain.boundary_tol {
            return Err(Error::outside(start.x.coords, "trace start outside domain"));
        }
        let mut times = vec![0.0];
        let mut states = vec![start];
        let mut t = 0.0;
        let mut cur = start;
        let mut rho_prev = rho0.min(0.0);
        loop {
            let mut dt = h;
            if let Some(stop) = t_stop {
                if t >= stop - 1e-14 {
                    return Ok(GeodesicTrace {
                        times,
                        states,
                        starts_on_boundary: self.domain.on_boundary(&start.x),
                        ends_on_boundary: false,
                    });
                }
                dt = dt.min(stop - t);
            }
            if t > budget {
                return Err(Error::TrappedGeodesic { budget });
            }
            let next = self.rk4_step(&cur, dt);
            if !next.x.is_finite(n) {
                return Err(Error::RangeExit("non-finite state during trace".into()));
            }
            let rho = self.domain.rho(&next.x);
            if rho > 0.0 && rho_prev <= 0.0 {
                let (dt_cross, exit) = self.polish_crossing(&cur, dt);
                let exit = PhaseState {
                    x: exit.x,
                    v: self.metric.normalize(&exit.x, &exit.v)?,
                };
                if dt_cross > 1e-14 {
                    times.push(t + dt_cross);
                    states.push(exit);
                } else {
                    // crossing at the current sample itself
                    *states.last_mut().expect("nonempty") = exit;
                }
                return Ok(GeodesicTrace {
                    times,
                    states,
                    starts_on_boundary: self.domain.on_boundary(&start.x),
                    ends_on_boundary: true,
                });
            }
            if rho >= self.params.rho_pad {
                return Err(Error::RangeExit(format!(
                    "trace left the padded domain without a bracketed crossing (rho = {rho:.3e})"
                )));
            }
            let renorm = PhaseState {
                x: next.x,
                v: self.metric.normalize(&next.x, &next.v)?,
            };
            t += dt;
            times.push(t);
            states.push(renorm);
            cur = renorm;
            rho_prev = rho;
        }
    }

    /// Forward exit without storing samples: returns (τ_+, exit state).
    pub fn exit_state(&self, start: &PhaseState) -> Result<(f64, PhaseState)> {
        let h = self.params.step;
        let budget = self.time_budget();
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
            let next = self.rk4_step(&cur, h);
            if !next.x.is_finite(n) {
                return Err(Error::RangeExit("non-finite state during walk".into()));
            }
            let rho = self.domain.rho(&next.x);
            if rho > 0.0 && rho_prev <= 0.0 {
                let (dt, exit) = self.polish_crossing(&cur, h);
                let exit = PhaseState {
                    x: exit.x,
                    v: self.metric.normalize(&exit.x, &exit.v)?,
                };
                return Ok((t + dt, exit));
            }
            if rho >= self.params.rho_pad {
                return Err(Error::RangeExit(
                    "walk left the padded domain without a bracketed crossing".into(),
                ));
            }
            // speed drift is O(h⁴) per unit time; normalize only at the exit
            cur = next;
            t += h;
            rho_prev = rho;
        }
    }

    /// Time to the boundary: τ_+ > 0 forward, τ_- < 0 backward.
    pub fn exit_time(&self, s: &PhaseState, dir: Direction) -> Result<f64> {
        if !self.domain.strictly_inside(&s.x) {
            return Err(Error::outside(
                s.x.coords,
                "exit_time start not strictly inside",
            ));
        }
        match dir {
            Direction::Forward => Ok(self.exit_state(s)?.0),
            Direction::Backward => {
                let reversed = PhaseState {
                    x: s.x,
                    v: linalg::scale(&s.v, -1.0, self.dim()),
                };
                Ok(-self.exit_state(&reversed)?.0)
            }
        }
    }

    /// Flow backward to the boundary and return the inward ray the geodesic
    /// entered on. Constant along the geodesic.
    pub fn footpoint(&self, s: &PhaseState) -> Result<BoundaryRay> {
        let reversed = PhaseState {
            x: s.x,
            v: linalg::scale(&s.v, -1.0, self.dim()),
        };
        let (_tau, end) = self.exit_state(&reversed)?;
        // un-reverse: the entry direction points inward
        let w = linalg::scale(&end.v, -1.0, self.dim());
        self.boundary_ray(&end.x, &w)
    }

    /// Assemble a [`BoundaryRay`] from a boundary point and an inward vector.
    pub fn boundary_ray(&self, x: &Point, w: &Vector) -> Result<BoundaryRay> {
        let w = self.metric.normalize(x, w)?;
        let nu = self.domain.boundary_normal(self.metric, x)?;
        let mu = -self.metric.dot(x, &w, &nu)?;
        let chart = BoundaryChart::new(self.metric, self.domain);
        let params = chart.params_of_ray(x, &w)?;
        Ok(BoundaryRay {
            point: *x,
            direction: w,
            mu,
            params,
        })
    }
}

/// Scale relating ρ values to chart distances near the boundary (|∇ρ| there).
pub(crate) fn domain_rho_scale(d: &DomainModel) -> f64 {
    match d.shape {
        DomainShape::Disk { radius } | DomainShape::Ball { radius } => radius,
        DomainShape::Ellipse { a, b } => a.max(b),
    }
}

/// Exponential map: follow the geodesic with initial velocity `w` for unit
/// parameter time (equivalently the unit-speed geodesic for time `|w|_g`).
pub fn exp_map(m: &MetricModel, x: &Point, w: &Vector, step: f64) -> Result<Point> {
    let n = m.dim();
    let len = m.norm(x, w)?;
    if len == 0.0 {
        return Ok(*x);
    }
    let dir = linalg::scale(w, 1.0 / len, n);
    // integrate without a domain: only the metric's validity region limits us
    let dummy_domain = match n {
        2 => DomainModel::disk(f64::INFINITY),
        _ => DomainModel::ball(f64::INFINITY),
    };
    let flow = GeodesicFlow::new(m, &dummy_domain, FlowParams::default().with_step(step));
    let mut s = PhaseState { x: *x, v: dir };
    let mut remaining = len;
    while remaining > 1e-14 {
        let dt = remaining.min(step);
        s = flow.rk4_step(&s, dt);
        if !s.x.is_finite(n) {
            return Err(Error::RangeExit("exponential map left the chart".into()));
        }
        m.metric_at(&s.x)?;
        s.v = m.normalize(&s.x, &s.v)?;
        remaining -= dt;
    }
    Ok(s.x)
}

// ---------------------------------------------------------------------------
// Boundary chart: parameters on the inward sphere bundle over the boundary
// ---------------------------------------------------------------------------

/// Chart on the inward boundary sphere bundle.
///
/// Parameters are (boundary parameters..., direction angles...):
/// - n = 2: `(α, β)` with boundary point `x(α)` and direction
///   `w = cos β ν_in + sin β t₁`; β ∈ (−π/2, π/2).
/// - n = 3: `(θ, φ, β, ψ)` with `w = cos β ν_in + sin β (cos ψ t₁ + sin ψ t₂)`;
///   β ∈ (0, π/2).
///
/// The frames `(ν_in, t₁, t₂)` are g-orthonormal, so the Santaló weight is
/// `μ = cos β` and the fiber measure is `dβ` (n=2) or `sin β dβ dψ` (n=3).
pub struct BoundaryChart<'a> {
    pub metric: &'a MetricModel,
    pub domain: &'a DomainModel,
}

impl<'a> BoundaryChart<'a> {
    pub fn new(metric: &'a MetricModel, domain: &'a DomainModel) -> Self {
        BoundaryChart { metric, domain }
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Number of chart parameters, `2(n-1)`.
    pub fn n_params(&self) -> usize {
        2 * (self.dim() - 1)
    }

    /// Boundary point from boundary parameters.
    pub fn boundary_point(&self, p: &[f64]) -> Point {
        match self.domain.shape {
            DomainShape::Disk { radius } => Point::new2(radius * p[0].cos(), radius * p[0].sin()),
            DomainShape::Ellipse { a, b } => Point::new2(a * p[0].cos(), b * p[0].sin()),
            DomainShape::Ball { radius } => {
                let (theta, phi) = (p[0], p[1]);
                Point::new3(
                    radius * theta.sin() * phi.cos(),
                    radius * theta.sin() * phi.sin(),
                    radius * theta.cos(),
                )
            }
        }
    }

    /// Boundary parameters of a boundary point.
    pub fn boundary_params(&self, x: &Point) -> [f64; 2] {
        let c = &x.coords;
        let two_pi = 2.0 * std::f64::consts::PI;
        match self.domain.shape {
            DomainShape::Disk { .. } => [c[1].atan2(c[0]).rem_euclid(two_pi), 0.0],
            DomainShape::Ellipse { a, b } => [(c[1] / b).atan2(c[0] / a).rem_euclid(two_pi), 0.0],
            DomainShape::Ball { radius } => {
                let z = (c[2] / radius).clamp(-1.0, 1.0);
                [z.acos(), c[1].atan2(c[0]).rem_euclid(two_pi)]
            }
        }
    }

    /// Coordinate derivatives of the boundary point w.r.t. boundary parameters.
    fn boundary_tangents(&self, p: &[f64]) -> Vec<Vector> {
        match self.domain.shape {
            DomainShape::Disk { radius } => {
                vec![[-radius * p[0].sin(), radius * p[0].cos(), 0.0]]
            }
            DomainShape::Ellipse { a, b } => vec![[-a * p[0].sin(), b * p[0].cos(), 0.0]],
            DomainShape::Ball { radius } => {
                let (st, ct) = p[0].sin_cos();
                let (sp, cp) = p[1].sin_cos();
                vec![
                    [radius * ct * cp, radius * ct * sp, -radius * st],
                    [-radius * st * sp, radius * st * cp, 0.0],
                ]
            }
        }
    }

    /// g-orthonormal frame (ν_in, t₁[, t₂]) at a boundary point, built from
    /// the boundary parameterization so it varies smoothly along the boundary.
    pub fn frame(&self, x: &Point) -> Result<Vec<Vector>> {
        let n = self.dim();
        let p = self.boundary_params(x);
        let nu_out = self.domain.boundary_normal(self.metric, x)?;
        let nu_in = linalg::scale(&nu_out, -1.0, n);
        let g = self.metric.metric_at(x)?;
        let mut seeds = vec![nu_in];
        seeds.extend(self.boundary_tangents(&p));
        Ok(linalg::gram_schmidt_g(&seeds, &g, n))
    }

    /// Ray from full chart parameters.
    pub fn ray_from_params(&self, p: &[f64; 4]) -> Result<BoundaryRay> {
        let n = self.dim();
        let x = self.boundary_point(&p[..n - 1]);
        let frame = self.frame(&x)?;
        let w = match n {
            2 => {
                let beta = p[1];
                let mut w = linalg::scale(&frame[0], beta.cos(), n);
                linalg::axpy(&mut w, beta.sin(), &frame[1], n);
                w
            }
            _ => {
                let (beta, psi) = (p[2], p[3]);
                let mut w = linalg::scale(&frame[0], beta.cos(), n);
                linalg::axpy(&mut w, beta.sin() * psi.cos(), &frame[1], n);
                linalg::axpy(&mut w, beta.sin() * psi.sin(), &frame[2], n);
                w
            }
        };
        let mu = match n {
            2 => p[1].cos(),
            _ => p[2].cos(),
        };
        Ok(BoundaryRay {
            point: x,
            direction: w,
            mu,
            params: *p,
        })
    }

    /// Chart parameters of an inward ray at a boundary point.
    pub fn params_of_ray(&self, x: &Point, w: &Vector) -> Result<[f64; 4]> {
        let n = self.dim();
        let frame = self.frame(x)?;
        let bp = self.boundary_params(x);
        let a = self.metric.dot(x, w, &frame[0])?;
        let b1 = self.metric.dot(x, w, &frame[1])?;
        let mut params = [0.0; 4];
        if n == 2 {
            params[0] = bp[0];
            params[1] = b1.atan2(a);
        } else {
            let b2 = self.metric.dot(x, w, &frame[2])?;
            params[0] = bp[0];
            params[1] = bp[1];
            let tang = (b1 * b1 + b2 * b2).sqrt();
            params[2] = tang.atan2(a);
            params[3] = b2.atan2(b1).rem_euclid(2.0 * std::f64::consts::PI);
        }
        Ok(params)
    }

    /// g-area element of the boundary w.r.t. the boundary parameters.
    pub fn boundary_jacobian(&self, p: &[f64]) -> Result<f64> {
        let x = self.boundary_point(p);
        let g = self.metric.metric_at(&x)?;
        let tangents = self.boundary_tangents(p);
        let n = self.dim();
        match tangents.len() {
            1 => Ok(linalg::norm_g(&g, &tangents[0], n)),
            2 => {
                let e = linalg::dot_g(&g, &tangents[0], &tangents[0], n);
                let f = linalg::dot_g(&g, &tangents[0], &tangents[1], n);
                let h = linalg::dot_g(&g, &tangents[1], &tangents[1], n);
                Ok((e * h - f * f).max(0.0).sqrt())
            }
            _ => unreachable!(),
        }
    }

    /// Difference of chart parameters with periodic components unwrapped to
    /// the principal branch, for finite differencing.
    pub fn param_delta(&self, a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
        let two_pi = 2.0 * std::f64::consts::PI;
        let wrap = |d: f64| {
            let mut d = d % two_pi;
            if d > std::f64::consts::PI {
                d -= two_pi;
            } else if d < -std::f64::consts::PI {
                d += two_pi;
            }
            d
        };
        let mut out = [0.0; 4];
        match self.dim() {
            2 => {
                out[0] = wrap(a[0] - b[0]);
                out[1] = a[1] - b[1];
            }
            _ => {
                out[0] = a[0] - b[0];
                out[1] = wrap(a[1] - b[1]);
                out[2] = a[2] - b[2];
                out[3] = wrap(a[3] - b[3]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{GaussianBump, SoundSpeed};
    use std::f64::consts::PI;

    fn lens(amplitude: f64) -> MetricModel {
        MetricModel::conformal(
            2,
            SoundSpeed::GaussianBumps(vec![GaussianBump {
                amplitude,
                sigma: 0.25,
                center: ZERO_VEC,
            }]),
        )
    }

    #[test]
    fn euclidean_flow_is_straight() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default());
        let s = PhaseState::new(Point::new2(0.0, 0.0), [1.0, 0.0, 0.0]);
        let out = flow.flow_step(&s, 0.3).unwrap();
        assert!((out.x.coords[0] - 0.3).abs() < 1e-14);
        assert!(out.x.coords[1].abs() < 1e-14);
        assert!((out.v[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_patch_great_circle_period() {
        // a great circle not through the chart poles closes up after arclength
        // 2π; start off-origin so the chart image stays bounded
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(5.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(1e-3));
        let x0 = Point::new2(0.5, 0.0);
        let v0 = m.normalize(&x0, &[0.0, 1.0, 0.0]).unwrap();
        let mut s = PhaseState::new(x0, v0);
        let steps = (2.0 * PI / 1e-3).round() as usize;
        let h = 2.0 * PI / steps as f64;
        for _ in 0..steps {
            s = flow.flow_step(&s, h).unwrap();
        }
        let err = ((s.x.coords[0] - 0.5).powi(2) + s.x.coords[1].powi(2)).sqrt();
        assert!(err < 1e-6, "great-circle period error {err:.2e}");
    }

    #[test]
    fn richardson_step_halving_lens() {
        let m = lens(0.5);
        let d = DomainModel::disk(1.0);
        let s = PhaseState::unit(&m, Point::new2(-0.6, 0.2), &[1.0, 0.15, 0.0]).unwrap();
        let run = |h: f64| {
            let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(h));
            let mut cur = s;
            let steps = (1.0 / h).round() as usize;
            for _ in 0..steps {
                cur = flow.flow_step(&cur, h).unwrap();
            }
            cur
        };
        let coarse = run(0.002);
        let fine = run(0.001);
        let err = ((coarse.x.coords[0] - fine.x.coords[0]).powi(2)
            + (coarse.x.coords[1] - fine.x.coords[1]).powi(2))
        .sqrt();
        assert!(err < 1e-8, "Richardson position check failed: {err:.2e}");
    }

    #[test]
    fn exit_time_euclidean_chords() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default());
        let s = PhaseState::new(Point::new2(-0.5, 0.0), [1.0, 0.0, 0.0]);
        let tau = flow.exit_time(&s, Direction::Forward).unwrap();
        assert!((tau - 1.5).abs() < 1e-9, "tau_+ = {tau}");

        let s2 = PhaseState::new(Point::new2(0.0, 0.0), [0.0, 1.0, 0.0]);
        let tp = flow.exit_time(&s2, Direction::Forward).unwrap();
        let tm = flow.exit_time(&s2, Direction::Backward).unwrap();
        assert!((tp - 1.0).abs() < 1e-9);
        assert!((tm + 1.0).abs() < 1e-9);
    }

    #[test]
    fn exit_time_matches_dense_scan_on_lens() {
        let m = lens(0.4);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(4e-3));
        let s = PhaseState::unit(&m, Point::new2(-0.3, 0.1), &[0.9, 0.35, 0.0]).unwrap();
        let tau = flow.exit_time(&s, Direction::Forward).unwrap();
        // dense-scan oracle: first boundary crossing on a 10x finer sampling
        let fine = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(4e-4));
        let tau_fine = fine.exit_time(&s, Direction::Forward).unwrap();
        assert!(
            (tau - tau_fine).abs() < 1e-7,
            "tau mismatch: {tau} vs {tau_fine}"
        );
    }

    #[test]
    fn footpoint_euclidean_diameter() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default());
        let s = PhaseState::new(Point::new2(0.0, 0.0), [1.0, 0.0, 0.0]);
        let ray = flow.footpoint(&s).unwrap();
        assert!((ray.point.coords[0] + 1.0).abs() < 1e-8);
        assert!(ray.point.coords[1].abs() < 1e-8);
        assert!((ray.direction[0] - 1.0).abs() < 1e-8);
        assert!(
            (ray.mu - 1.0).abs() < 1e-8,
            "diameter ray has normal incidence"
        );
    }

    #[test]
    fn footpoint_constant_along_ray() {
        let m = lens(0.3);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(2e-3));
        let s = PhaseState::unit(&m, Point::new2(0.1, -0.2), &[0.7, 0.6, 0.0]).unwrap();
        let f0 = flow.footpoint(&s).unwrap();
        let mut moved = s;
        let steps = (0.4 / 2e-3) as usize;
        for _ in 0..steps {
            moved = flow.flow_step(&moved, 2e-3).unwrap();
        }
        let f1 = flow.footpoint(&moved).unwrap();
        let dp = linalg::sub(&f1.point.coords, &f0.point.coords, 2);
        let dv = linalg::sub(&f1.direction, &f0.direction, 2);
        assert!(linalg::dot(&dp, &dp, 2).sqrt() < 1e-7);
        assert!(linalg::dot(&dv, &dv, 2).sqrt() < 1e-7);
    }

    #[test]
    fn flow_reversibility() {
        let m = lens(0.5);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(2e-3));
        let s = PhaseState::unit(&m, Point::new2(-0.4, 0.3), &[1.0, -0.2, 0.0]).unwrap();
        let trace = flow.trace(&s).unwrap();
        let tau = trace.exit_time();
        let end = trace.end();
        let back_start = PhaseState {
            x: end.x,
            v: linalg::scale(&end.v, -1.0, 2),
        };
        let back = flow.trace_until(&back_start, tau).unwrap();
        let ret = back.end();
        let err = ((ret.x.coords[0] - s.x.coords[0]).powi(2)
            + (ret.x.coords[1] - s.x.coords[1]).powi(2))
        .sqrt();
        assert!(err < 1e-7, "reversibility error {err:.2e}");
    }

    #[test]
    fn unit_speed_drift_small() {
        let m = lens(0.5);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default());
        let s = PhaseState::unit(&m, Point::new2(-0.2, -0.5), &[0.3, 1.0, 0.0]).unwrap();
        let trace = flow.trace(&s).unwrap();
        for st in &trace.states {
            let nrm = m.norm(&st.x, &st.v).unwrap();
            assert!((nrm - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn exp_map_euclidean_translates() {
        let m = MetricModel::euclidean(3);
        let x = Point::new3(0.1, 0.2, -0.1);
        let w = [0.3, -0.4, 0.2];
        let y = exp_map(&m, &x, &w, 0.01).unwrap();
        for i in 0..3 {
            assert!((y.coords[i] - (x.coords[i] + w[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_map_sphere_patch_antipode() {
        // on the unit sphere the geodesic of length π lands on the antipode;
        // in stereographic coordinates the antipodal map is x ↦ −x/|x|²
        let m = MetricModel::sphere_patch(2, 1.0);
        let x = Point::new2(0.5, 0.0);
        let v = m.normalize(&x, &[0.0, 1.0, 0.0]).unwrap();
        let w = linalg::scale(&v, PI, 2);
        let y = exp_map(&m, &x, &w, 5e-4).unwrap();
        let expect = Point::new2(-2.0, 0.0);
        let err = ((y.coords[0] - expect.coords[0]).powi(2)
            + (y.coords[1] - expect.coords[1]).powi(2))
        .sqrt();
        assert!(err < 1e-5, "antipode error {err:.2e}");
    }

    #[test]
    fn exp_map_consistent_with_flow_steps() {
        let m = lens(0.4);
        let x = Point::new2(-0.3, 0.2);
        let v = m.normalize(&x, &[1.0, 0.4, 0.0]).unwrap();
        let t = 0.7;
        let w = linalg::scale(&v, t, 2);
        let via_exp = exp_map(&m, &x, &w, 1e-3).unwrap();
        let d = DomainModel::disk(10.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(1e-3));
        let mut s = PhaseState::new(x, v);
        for _ in 0..700 {
            s = flow.flow_step(&s, 1e-3).unwrap();
        }
        let err = ((via_exp.coords[0] - s.x.coords[0]).powi(2)
            + (via_exp.coords[1] - s.x.coords[1]).powi(2))
        .sqrt();
        assert!(err < 1e-9, "exp/flow mismatch {err:.2e}");
    }

    #[test]
    fn boundary_chart_roundtrip() {
        let m = lens(0.3);
        let d = DomainModel::disk(1.0);
        let chart = BoundaryChart::new(&m, &d);
        let p = [1.1, 0.4, 0.0, 0.0];
        let ray = chart.ray_from_params(&p).unwrap();
        assert!((m.norm(&ray.point, &ray.direction).unwrap() - 1.0).abs() < 1e-12);
        let back = chart.params_of_ray(&ray.point, &ray.direction).unwrap();
        assert!((back[0] - p[0]).abs() < 1e-10);
        assert!((back[1] - p[1]).abs() < 1e-10);
        // Santaló weight is cos β
        assert!((ray.mu - 0.4_f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn boundary_chart_roundtrip_3d() {
        let m = MetricModel::euclidean(3);
        let d = DomainModel::ball(1.0);
        let chart = BoundaryChart::new(&m, &d);
        let p = [1.0, 2.2, 0.7, 4.0];
        let ray = chart.ray_from_params(&p).unwrap();
        let back = chart.params_of_ray(&ray.point, &ray.direction).unwrap();
        for i in 0..4 {
            assert!(
                (back[i] - p[i]).abs() < 1e-10,
                "param {i}: {} vs {}",
                back[i],
                p[i]
            );
        }
    }

    #[test]
    fn trapped_budget_errors() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let mut params = FlowParams::default();
        params.max_time_factor = 0.1;
        let flow = GeodesicFlow::new(&m, &d, params);
        let s = PhaseState::new(Point::new2(-0.9, 0.0), [1.0, 0.0, 0.0]);
        match flow.trace(&s) {
            Err(Error::TrappedGeodesic { .. }) => {}
            other => panic!("expected trapped error, got {other:?}"),
        }
    }
}
