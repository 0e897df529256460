//! Conjugate-pair detection and classification along geodesics.
//!
//! Two phase points on one geodesic are conjugate of order k when a
//! k-dimensional space of Jacobi fields vanishes at both footpoints. We track
//! the vanishing-at-start Jacobi block restricted to the orthogonal complement
//! of the velocity: its columns stay orthogonal to the velocity, so in a
//! transported orthonormal basis the restriction is a square matrix whose
//! determinant changes sign at odd-order conjugate times and dips to zero at
//! even-order ones. Roots are bracketed on the trace samples and polished;
//! the order is read off the singular values at the root, and the kernel
//! vectors give the covector pair attached to the two footpoints.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{BoundaryChart, FlowParams, GeodesicFlow, PhaseState};
use crate::jacobi::{jacobi_propagate, JacobiFrame, JointState};
use crate::linalg::{self, Matrix, Vector, ZERO_MAT, ZERO_VEC};
use crate::manifold::{Covector, DomainModel, MetricModel, Point};

/// Tolerances and probe radii for the conjugacy pipeline.
#[derive(Clone, Copy, Debug)]
pub struct ConjugacyParams {
    /// Relative rank threshold defining the order k.
    pub tol_rank: f64,
    /// Dip-detection threshold on the restricted determinant, relative to its
    /// running scale along the trace.
    pub dip_rel: f64,
    /// Ignore roots before this time (the start itself is a trivial zero).
    pub t_min: f64,
    /// Step for the finite differences of the footpoint map.
    pub fd_step: f64,
    /// Ray-parameter radius of the regularity stencil.
    pub stencil_radius: f64,
    /// Relative conditioning threshold for the canonical-graph test.
    pub tol_graph: f64,
    /// Step for the graph-test Jacobians (record parameters).
    pub graph_fd: f64,
}

impl Default for ConjugacyParams {
    fn default() -> Self {
        ConjugacyParams {
            tol_rank: 1e-6,
            dip_rel: 1e-4,
            t_min: 2e-2,
            fd_step: 1e-4,
            stencil_radius: 2e-3,
            tol_graph: 1e-4,
            graph_fd: 1e-3,
        }
    }
}

/// A detected conjugate pair along one geodesic.
#[derive(Clone, Debug)]
pub struct ConjugateRecord {
    /// Base phase point v.
    pub base: PhaseState,
    /// Conjugate phase point, the flow of v at `time`.
    pub conjugate: PhaseState,
    /// Flow time s from `base` to `conjugate`.
    pub time: f64,
    /// Order k of the pair.
    pub order: usize,
    /// Singular values of the restricted Jacobi block at the root.
    pub singular_values: Vec<f64>,
    /// Vertical fiber components of the kernel basis at `base`.
    pub kernel: Vec<Vector>,
    /// Covector pair attached to the two footpoints.
    pub eta: Covector,
    pub eta_tilde: Covector,
    /// Root polish converged.
    pub converged: bool,
    /// Ray-grid parameters of the generating fan ray (locus scans).
    pub ray_params: [f64; 4],
    /// Time offset of `base` along the fan ray.
    pub base_offset: f64,
    /// Regularity flag: conjugate order constant on the neighbor stencil.
    pub regular: Option<bool>,
    /// Common-covector residuals (base side, conjugate side).
    pub residuals: Option<(f64, f64)>,
    /// Canonical-graph conditioning margins (base side, conjugate side).
    pub graph_margins: Option<(f64, f64)>,
}

/// Raw root found by the detector, before covectors are attached.
#[derive(Clone, Debug)]
pub struct ConjugateRoot {
    pub time: f64,
    pub order: usize,
    pub singular_values: Vec<f64>,
    /// Kernel basis in vertical fiber components at the trace start.
    pub kernel: Vec<Vector>,
    pub converged: bool,
}

/// Scan machinery bound to a metric/domain/flow-parameter triple.
pub struct ConjugacyScan<'a> {
    pub metric: &'a MetricModel,
    pub domain: &'a DomainModel,
    pub flow_params: FlowParams,
    pub params: ConjugacyParams,
}

/// Basis of the velocity-orthogonal complement at the trace start, as columns.
fn normal_basis(m: &MetricModel, start: &PhaseState) -> Result<Vec<Vector>> {
    let frame = m.frame_adapted(&start.x, &start.v)?;
    Ok(frame[1..].to_vec())
}

/// The restricted Jacobi block at a joint sample: columns `G^{1/2} J e_a`
/// (all orthogonal to the transported velocity in the euclidean sense after
/// the metric square root).
fn restricted_block(m: &MetricModel, js: &JointState, basis: &[Vector]) -> (Matrix, Vector) {
    let n = m.dim();
    let g = m.metric_unchecked(&js.x);
    let gh = linalg::sym_sqrt(&g, n);
    let mut cols = ZERO_MAT; // columns 0..n-2 hold G^{1/2} J e_a
    for (a, e) in basis.iter().enumerate() {
        let je = linalg::mat_vec(&js.dx1, e, n);
        let w = linalg::mat_vec(&gh, &je, n);
        for i in 0..n {
            cols[i][a] = w[i];
        }
    }
    let u = linalg::mat_vec(&gh, &js.v, n);
    let un = linalg::dot(&u, &u, n).sqrt().max(1e-300);
    (cols, linalg::scale(&u, 1.0 / un, n))
}

/// Continue an orthonormal frame of `u⊥` from a previous one (projection +
/// Gram-Schmidt); keeps the determinant sign continuous along the trace.
fn continue_frame(prev: &[Vector], u: &Vector, n: usize) -> Vec<Vector> {
    let mut frame: Vec<Vector> = Vec::with_capacity(n - 1);
    for p in prev {
        let mut e = *p;
        let c = linalg::dot(&e, u, n);
        linalg::axpy(&mut e, -c, u, n);
        for f in &frame {
            let c2 = linalg::dot(&e, f, n);
            linalg::axpy(&mut e, -c2, f, n);
        }
        let nrm = linalg::dot(&e, &e, n).sqrt();
        assert!(nrm > 1e-8, "frame continuation degenerated");
        frame.push(linalg::scale(&e, 1.0 / nrm, n));
    }
    frame
}

/// Determinant of the (n−1)×(n−1) matrix `Fᵀ B`.
fn restricted_det(fr: &[Vector], cols: &Matrix, n: usize) -> f64 {
    let k = n - 1;
    let mut d = ZERO_MAT;
    for r in 0..k {
        for c in 0..k {
            let mut acc = 0.0;
            for i in 0..n {
                acc += fr[r][i] * cols[i][c];
            }
            d[r][c] = acc;
        }
    }
    linalg::det(&d, k)
}

/// Thin SVD of the restricted block via the (n−1)×(n−1) Gram matrix: returns
/// singular values (descending) and right singular vectors (in the basis of
/// the columns).
fn block_singular_values(cols: &Matrix, n: usize) -> (Vec<f64>, Vec<Vector>) {
    let k = n - 1;
    let mut gram = ZERO_MAT;
    for a in 0..k {
        for b in 0..k {
            let mut acc = 0.0;
            for i in 0..n {
                acc += cols[i][a] * cols[i][b];
            }
            gram[a][b] = acc;
        }
    }
    let (eig, vecs) = linalg::sym_eigen(&gram, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig[b].partial_cmp(&eig[a]).expect("finite eigenvalues"));
    let mut sv = Vec::with_capacity(k);
    let mut right = Vec::with_capacity(k);
    for &i in &order {
        sv.push(eig[i].max(0.0).sqrt());
        let mut col = ZERO_VEC;
        for r in 0..k {
            col[r] = vecs[r][i];
        }
        right.push(col);
    }
    (sv, right)
}

impl<'a> ConjugacyScan<'a> {
    pub fn new(
        metric: &'a MetricModel,
        domain: &'a DomainModel,
        flow_params: FlowParams,
        params: ConjugacyParams,
    ) -> Self {
        ConjugacyScan {
            metric,
            domain,
            flow_params,
            params,
        }
    }

    fn flow(&self) -> GeodesicFlow<'_> {
        GeodesicFlow::new(self.metric, self.domain, self.flow_params)
    }

    /// All conjugate times along the trace of `frame`, with order and kernel.
    ///
    /// The scan walks the restricted determinant along the samples, brackets
    /// sign changes, and golden-sections dips without a sign change (roots of
    /// even order). A failed polish yields a record flagged `converged: false`
    /// rather than a dropped root.
    pub fn conjugate_times(&self, frame: &JacobiFrame) -> Result<Vec<ConjugateRoot>> {
        let m = self.metric;
        let n = m.dim();
        let start = frame.samples[0].phase();
        let basis = normal_basis(m, &start)?;
        let step = self.flow_params.step;

        // sample the restricted determinant with a continued frame
        let mut dets = Vec::with_capacity(frame.len());
        let mut frames: Vec<Vec<Vector>> = Vec::with_capacity(frame.len());
        let mut sv_scale = 0.0_f64;
        for js in &frame.samples {
            let (cols, u) = restricted_block(m, js, &basis);
            let fr = if frames.is_empty() {
                // at t = 0 the columns are G^{1/2} e_a themselves, orthonormal
                // and orthogonal to u
                let mut f0 = Vec::with_capacity(n - 1);
                let g = m.metric_unchecked(&js.x);
                let gh = linalg::sym_sqrt(&g, n);
                for e in &basis {
                    f0.push(linalg::mat_vec(&gh, e, n));
                }
                continue_frame(&f0, &u, n)
            } else {
                continue_frame(frames.last().expect("nonempty"), &u, n)
            };
            dets.push(restricted_det(&fr, &cols, n));
            let (sv, _) = block_singular_values(&cols, n);
            sv_scale = sv_scale.max(sv[0]);
            frames.push(fr);
        }

        let det_scale = dets.iter().fold(0.0_f64, |a, d| a.max(d.abs())).max(1e-300);
        let eval_det = |t: f64, near: usize| -> (f64, Matrix) {
            let js = frame.eval_at(m, t, step);
            let (cols, u) = restricted_block(m, &js, &basis);
            let fr = continue_frame(&frames[near], &u, n);
            (restricted_det(&fr, &cols, n), cols)
        };

        let mut roots = Vec::new();
        let times = &frame.times;
        let mut i = 0;
        while i + 1 < times.len() {
            let (t0, t1) = (times[i], times[i + 1]);
            if t1 < self.params.t_min {
                i += 1;
                continue;
            }
            let (d0, d1) = (dets[i], dets[i + 1]);
            if d0 == 0.0 && t0 <= self.params.t_min {
                i += 1;
                continue;
            }
            if d0 * d1 < 0.0 {
                // odd-order root: Illinois secant on the determinant
                let (mut a, mut fa, mut b, mut fb) = (t0, d0, t1, d1);
                let mut side = 0i32;
                let mut converged = false;
                let mut t_root = 0.5 * (a + b);
                for _ in 0..64 {
                    t_root = (a * fb - b * fa) / (fb - fa);
                    let (ft, _) = eval_det(t_root, i);
                    if ft.abs() <= 1e-13 * det_scale || (b - a).abs() < 1e-13 {
                        converged = true;
                        break;
                    }
                    if ft * fa < 0.0 {
                        b = t_root;
                        fb = ft;
                        if side == -1 {
                            fa *= 0.5;
                        }
                        side = -1;
                    } else {
                        a = t_root;
                        fa = ft;
                        if side == 1 {
                            fb *= 0.5;
                        }
                        side = 1;
                    }
                }
                converged = converged || (b - a).abs() < 1e-10;
                roots.push(self.classify_root(frame, &basis, t_root, sv_scale, converged, i));
                i += 1;
                continue;
            }
            // even-order root: a dip of |det| toward zero without sign change
            if i >= 1 {
                let (dm, dc, dp) = (dets[i - 1].abs(), dets[i].abs(), dets[i + 1].abs());
                if dc <= dm && dc <= dp && dc < self.params.dip_rel * det_scale && times[i] > self.params.t_min
                {
                    // golden-section minimize |det| over [t_{i-1}, t_{i+1}]
                    let (mut a, mut b) = (times[i - 1], times[i + 1]);
                    let gr = (5.0_f64.sqrt() - 1.0) / 2.0;
                    let mut c = b - gr * (b - a);
                    let mut d = a + gr * (b - a);
                    let mut fc = eval_det(c, i).0.abs();
                    let mut fd = eval_det(d, i).0.abs();
                    for _ in 0..60 {
                        if fc < fd {
                            b = d;
                            d = c;
                            fd = fc;
                            c = b - gr * (b - a);
                            fc = eval_det(c, i).0.abs();
                        } else {
                            a = c;
                            c = d;
                            fc = fd;
                            d = a + gr * (b - a);
                            fd = eval_det(d, i).0.abs();
                        }
                        if (b - a).abs() < 1e-12 {
                            break;
                        }
                    }
                    let t_root = 0.5 * (a + b);
                    let root =
                        self.classify_root(frame, &basis, t_root, sv_scale, (b - a).abs() < 1e-9, i);
                    // only keep the dip if the rank actually drops
                    if root.order > 0 {
                        roots.push(root);
                    }
                }
            }
            i += 1;
        }
        Ok(roots)
    }

    fn classify_root(
        &self,
        frame: &JacobiFrame,
        basis: &[Vector],
        t_root: f64,
        sv_scale: f64,
        converged: bool,
        _near: usize,
    ) -> ConjugateRoot {
        let m = self.metric;
        let n = m.dim();
        let js = frame.eval_at(m, t_root, self.flow_params.step);
        let (cols, _u) = restricted_block(m, &js, &basis.to_vec());
        let (sv, right) = block_singular_values(&cols, n);
        let thresh = self.params.tol_rank * sv_scale.max(1e-300);
        let order = sv.iter().filter(|&&s| s < thresh).count();
        let mut kernel = Vec::with_capacity(order);
        for r in (0..n - 1).rev().take(order) {
            // right singular vectors of the smallest singular values span the
            // kernel in the normal basis
            let mut a = ZERO_VEC;
            for (bidx, e) in basis.iter().enumerate() {
                linalg::axpy(&mut a, right[r][bidx], e, n);
            }
            // deterministic orientation
            let lead = (0..n).find(|&i| a[i].abs() > 1e-12).unwrap_or(0);
            if a[lead] < 0.0 {
                a = linalg::scale(&a, -1.0, n);
            }
            kernel.push(a);
        }
        ConjugateRoot {
            time: t_root,
            order,
            singular_values: sv,
            kernel,
            converged,
        }
    }

    /// Attach the covector pair to a root: `η = ♭_g a` at the base footpoint
    /// and `η̃ = ♭_g ã` at the conjugate footpoint, where `ã` is the vertical
    /// part of the propagated kernel vector.
    pub fn covector_map(
        &self,
        frame: &JacobiFrame,
        root: &ConjugateRoot,
    ) -> Result<(Covector, Covector, PhaseState)> {
        let m = self.metric;
        let n = m.dim();
        let a = root
            .kernel
            .first()
            .ok_or_else(|| Error::Numerics("root has empty kernel".into()))?;
        let start = frame.samples[0].phase();
        let eta = m.flat(&start.x, a)?;
        let js = frame.eval_at(m, root.time, self.flow_params.step);
        let a_tilde = linalg::mat_vec(&js.dv1, a, n);
        let conj = js.phase();
        let eta_tilde = m.flat(&conj.x, &a_tilde)?;
        Ok((eta, eta_tilde, conj))
    }

    /// First conjugate record along the geodesic through `start` (flowing
    /// forward until exit or `t_cap`).
    pub fn first_conjugate(
        &self,
        start: &PhaseState,
        t_cap: Option<f64>,
    ) -> Result<Option<ConjugateRecord>> {
        let flow = self.flow();
        let trace = match t_cap {
            Some(cap) => flow.trace_until(start, cap)?,
            None => flow.trace(start)?,
        };
        let frame = jacobi_propagate(self.metric, &trace)?;
        let roots = self.conjugate_times(&frame)?;
        let Some(root) = roots.into_iter().next() else {
            return Ok(None);
        };
        let (eta, eta_tilde, conj) = self.covector_map(&frame, &root)?;
        Ok(Some(ConjugateRecord {
            base: *trace.start(),
            conjugate: conj,
            time: root.time,
            order: root.order,
            singular_values: root.singular_values,
            kernel: root.kernel,
            eta,
            eta_tilde,
            converged: root.converged,
            ray_params: [0.0; 4],
            base_offset: 0.0,
            regular: None,
            residuals: None,
            graph_margins: None,
        }))
    }
}

// ---------------------------------------------------------------------------
// Locus scan over a fan of inward rays
// ---------------------------------------------------------------------------

/// Fan of inward boundary rays for the locus scan.
#[derive(Clone, Copy, Debug)]
pub struct FanSpec {
    /// Nodes per boundary parameter axis.
    pub n_boundary: usize,
    /// Nodes per direction parameter axis.
    pub n_direction: usize,
    /// Grazing cutoff for fan rays (larger than the quadrature cutoff:
    /// near-tangent rays carry no useful conjugate structure).
    pub mu_min: f64,
    /// Flow offset moving the record base off the boundary.
    pub base_offset: f64,
    /// Optional cap on the scanned flow time.
    pub t_cap: Option<f64>,
}

impl Default for FanSpec {
    fn default() -> Self {
        FanSpec {
            n_boundary: 32,
            n_direction: 16,
            mu_min: 0.15,
            base_offset: 0.02,
            t_cap: None,
        }
    }
}

/// Conjugate records over a fan of rays, with regularity flags.
#[derive(Clone, Debug)]
pub struct LocusSample {
    pub records: Vec<ConjugateRecord>,
    /// Rays scanned without finding a conjugate pair.
    pub empty_rays: usize,
    /// Records whose neighbor stencil changed order (or lost the pair).
    pub singular_count: usize,
    /// Ray walks that failed (trapped / left the padded domain).
    pub failed_rays: usize,
}

impl<'a> ConjugacyScan<'a> {
    fn fan_params(&self, fan: &FanSpec) -> Vec<[f64; 4]> {
        use std::f64::consts::PI;
        let n = self.metric.dim();
        let beta_max = fan.mu_min.clamp(1e-6, 1.0).acos();
        let mut out = Vec::new();
        match n {
            2 => {
                for i in 0..fan.n_boundary {
                    let alpha = 2.0 * PI * (i as f64 + 0.5) / fan.n_boundary as f64;
                    for j in 0..fan.n_direction {
                        let beta =
                            -beta_max + 2.0 * beta_max * (j as f64 + 0.5) / fan.n_direction as f64;
                        out.push([alpha, beta, 0.0, 0.0]);
                    }
                }
            }
            _ => {
                let nb2 = 2 * fan.n_boundary;
                let nd2 = 2 * fan.n_direction;
                for i in 0..fan.n_boundary {
                    let theta = PI * (i as f64 + 0.5) / fan.n_boundary as f64;
                    for j in 0..nb2 {
                        let phi = 2.0 * PI * (j as f64 + 0.5) / nb2 as f64;
                        for k in 0..fan.n_direction {
                            let beta = beta_max * (k as f64 + 0.5) / fan.n_direction as f64;
                            for l in 0..nd2 {
                                let psi = 2.0 * PI * (l as f64 + 0.5) / nd2 as f64;
                                out.push([theta, phi, beta, psi]);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Base phase state of a fan ray: enter at the boundary and flow inward
    /// by the base offset.
    pub fn ray_base(&self, p: &[f64; 4], offset: f64) -> Result<PhaseState> {
        let chart = BoundaryChart::new(self.metric, self.domain);
        let ray = chart.ray_from_params(p)?;
        let flow = self.flow();
        let mut s = PhaseState::new(ray.point, ray.direction);
        if offset > 0.0 {
            let steps = (offset / self.flow_params.step).ceil().max(1.0) as usize;
            let dt = offset / steps as f64;
            for _ in 0..steps {
                s = flow.flow_step(&s, dt)?;
            }
        }
        Ok(s)
    }

    /// First conjugate record for each ray of the fan, with a neighbor
    /// stencil probing order constancy (2 probes per ray parameter).
    pub fn locus_scan(&self, fan: &FanSpec) -> Result<LocusSample> {
        let params = self.fan_params(fan);
        let n_axes = 2 * (self.metric.dim() - 1);
        let results: Vec<Result<Option<ConjugateRecord>>> = params
            .par_iter()
            .map(|p| {
                let base = match self.ray_base(p, fan.base_offset) {
                    Ok(b) => b,
                    Err(Error::RangeExit(_)) | Err(Error::TrappedGeodesic { .. }) => {
                        return Ok(None)
                    }
                    Err(e) => return Err(e),
                };
                let mut record = match self.first_conjugate(&base, fan.t_cap) {
                    Ok(Some(r)) => r,
                    Ok(None) => return Ok(None),
                    Err(Error::RangeExit(_)) | Err(Error::TrappedGeodesic { .. }) => {
                        return Ok(None)
                    }
                    Err(e) => return Err(e),
                };
                record.ray_params = *p;
                record.base_offset = fan.base_offset;
                // regularity stencil: same order on all neighbor probes
                let mut regular = true;
                'stencil: for a in 0..n_axes {
                    for sign in [-1.0, 1.0] {
                        let mut q = *p;
                        q[a] += sign * self.params.stencil_radius;
                        let probe = (|| -> Result<Option<usize>> {
                            let b = self.ray_base(&q, fan.base_offset)?;
                            Ok(self.first_conjugate(&b, fan.t_cap)?.map(|r| r.order))
                        })();
                        match probe {
                            Ok(Some(k)) if k == record.order => {}
                            Ok(_) => {
                                regular = false;
                                break 'stencil;
                            }
                            Err(_) => {
                                regular = false;
                                break 'stencil;
                            }
                        }
                    }
                }
                record.regular = Some(regular);
                Ok(Some(record))
            })
            .collect();
        let mut records = Vec::new();
        let mut empty = 0;
        let mut failed = 0;
        for r in results {
            match r {
                Ok(Some(rec)) => records.push(rec),
                Ok(None) => empty += 1,
                Err(_) => failed += 1,
            }
        }
        let singular_count = records
            .iter()
            .filter(|r| r.regular == Some(false))
            .count();
        Ok(LocusSample {
            records,
            empty_rays: empty,
            singular_count,
            failed_rays: failed,
        })
    }
}

// ---------------------------------------------------------------------------
// Common-covector condition (finite-difference check)
// ---------------------------------------------------------------------------

/// Report of the common-covector least-squares fit at a conjugate pair.
#[derive(Clone, Copy, Debug)]
pub struct EtalemReport {
    /// Relative residual on the base side.
    pub res_base: f64,
    /// Relative residual on the conjugate side.
    pub res_conj: f64,
    /// The finite differences survived without shrinking out of the domain.
    pub converged: bool,
}

impl<'a> ConjugacyScan<'a> {
    /// Local chart directions on the sphere bundle at `v`: the n coordinate
    /// directions and (n−1) vertical tilts along a g-orthonormal completion.
    fn sm_chart_states(&self, v: &PhaseState, delta: f64) -> Result<Vec<(PhaseState, PhaseState)>> {
        let m = self.metric;
        let n = m.dim();
        let frame = m.frame_adapted(&v.x, &v.v)?;
        let mut out = Vec::with_capacity(2 * n - 1);
        for j in 0..n {
            let mut xp = v.x.coords;
            let mut xm = v.x.coords;
            xp[j] += delta;
            xm[j] -= delta;
            // keep the same coordinate direction, renormalized in the local g
            let pp = Point { coords: xp };
            let pm = Point { coords: xm };
            out.push((
                PhaseState::unit(m, pp, &v.v)?,
                PhaseState::unit(m, pm, &v.v)?,
            ));
        }
        for t in frame.iter().skip(1) {
            let mut vp = v.v;
            let mut vm = v.v;
            linalg::axpy(&mut vp, delta, t, n);
            linalg::axpy(&mut vm, -delta, t, n);
            out.push((
                PhaseState::unit(m, v.x, &vp)?,
                PhaseState::unit(m, v.x, &vm)?,
            ));
        }
        Ok(out)
    }

    /// Rows of the footpoint differential at `v` (2n−1 chart directions ×
    /// 2n−2 boundary parameters) by central differences, together with the
    /// right-hand side `η(Dπ ·)` for the given covector.
    fn footpoint_jacobian_rows(
        &self,
        v: &PhaseState,
        eta: &Covector,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let m = self.metric;
        let n = m.dim();
        let chart = BoundaryChart::new(m, self.domain);
        let flow = self.flow();
        let n_params = 2 * (n - 1);
        let mut delta = self.params.fd_step;
        'attempt: for attempt in 0..4 {
            let states = self.sm_chart_states(v, delta)?;
            let mut rows = Vec::with_capacity(2 * n - 1);
            let mut rhs = Vec::with_capacity(2 * n - 1);
            for (j, (sp, sm)) in states.iter().enumerate() {
                let fp = flow.footpoint(sp);
                let fm = flow.footpoint(sm);
                let (fp, fm) = match (fp, fm) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => {
                        if attempt == 3 {
                            return Err(Error::Numerics(
                                "footpoint finite differences failed after 3 shrinks".into(),
                            ));
                        }
                        delta *= 0.5;
                        continue 'attempt;
                    }
                };
                let dp = chart.param_delta(&fp.params, &fm.params);
                let row: Vec<f64> = (0..n_params).map(|a| dp[a] / (2.0 * delta)).collect();
                rows.push(row);
                // Dπ of a position chart direction is that coordinate
                // direction; vertical tilts project to zero
                rhs.push(if j < n { eta.components[j] } else { 0.0 });
            }
            return Ok((rows, rhs));
        }
        unreachable!()
    }

    /// Least-squares fit of a single boundary covector ξ matching the pair of
    /// pull-back conditions at `v` and `ṽ`; returns the two relative residuals.
    pub fn etalem_check(
        &self,
        v: &PhaseState,
        v_tilde: &PhaseState,
        eta: &Covector,
        eta_tilde: &Covector,
    ) -> Result<EtalemReport> {
        let n = self.metric.dim();
        let n_params = 2 * (n - 1);
        let (rows_v, rhs_v) = self.footpoint_jacobian_rows(v, eta)?;
        let (rows_t, rhs_t) = self.footpoint_jacobian_rows(v_tilde, eta_tilde)?;
        let total_rows = rows_v.len() + rows_t.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(total_rows, n_params);
        let mut b = nalgebra::DVector::<f64>::zeros(total_rows);
        for (r, row) in rows_v.iter().chain(rows_t.iter()).enumerate() {
            for (c, val) in row.iter().enumerate() {
                a[(r, c)] = *val;
            }
        }
        for (r, val) in rhs_v.iter().chain(rhs_t.iter()).enumerate() {
            b[r] = *val;
        }
        let svd = a.clone().svd(true, true);
        let xi = svd
            .solve(&b, 1e-12)
            .map_err(|e| Error::Numerics(format!("least squares failed: {e}")))?;
        let resid = &a * &xi - &b;
        let m_v = rows_v.len();
        let norm = |s: &[f64]| (s.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let res_v: Vec<f64> = (0..m_v).map(|i| resid[i]).collect();
        let res_t: Vec<f64> = (m_v..total_rows).map(|i| resid[i]).collect();
        let scale_v = norm(&rhs_v).max(1e-12);
        let scale_t = norm(&rhs_t).max(1e-12);
        Ok(EtalemReport {
            res_base: norm(&res_v) / scale_v,
            res_conj: norm(&res_t) / scale_t,
            converged: true,
        })
    }

    /// Convenience: run the common-covector check on a record.
    pub fn etalem_check_record(&self, record: &ConjugateRecord) -> Result<EtalemReport> {
        self.etalem_check(
            &record.base,
            &record.conjugate,
            &record.eta,
            &record.eta_tilde,
        )
    }
}

// ---------------------------------------------------------------------------
// Canonical-graph conditioning test
// ---------------------------------------------------------------------------

/// Conditioning of the two projections of the covector relation at a record.
#[derive(Clone, Copy, Debug)]
pub struct GraphReport {
    /// σ_min/σ_max of the base-side projection Jacobian.
    pub margin_base: f64,
    /// σ_min/σ_max of the conjugate-side projection Jacobian.
    pub margin_conj: f64,
    pub passes: bool,
}

impl<'a> ConjugacyScan<'a> {
    /// Evaluate the covector relation at perturbed record parameters:
    /// (ray params, flow offset of the base along the ray, log covector
    /// scale) ↦ ((x, η), (x̃, η̃)).
    fn relation_point(
        &self,
        ray_params: &[f64; 4],
        base_offset: f64,
        log_scale: f64,
        t_cap: Option<f64>,
        kernel_ref: &Vector,
    ) -> Result<([f64; 6], [f64; 6])> {
        let m = self.metric;
        let n = m.dim();
        let base = self.ray_base(ray_params, base_offset)?;
        let record = self
            .first_conjugate(&base, t_cap)?
            .ok_or_else(|| Error::Numerics("probe lost the conjugate pair".into()))?;
        // deterministic kernel orientation against the reference
        let mut a = record.kernel[0];
        if linalg::dot(&a, kernel_ref, n) < 0.0 {
            a = linalg::scale(&a, -1.0, n);
        }
        let scale = log_scale.exp() / m.norm(&base.x, &a)?.max(1e-300);
        let a = linalg::scale(&a, scale, n);
        let eta = m.flat(&base.x, &a)?;
        // propagate the rescaled kernel vector
        let flow = self.flow();
        let trace = match t_cap {
            Some(cap) => flow.trace_until(&base, cap)?,
            None => flow.trace(&base)?,
        };
        let frame = jacobi_propagate(m, &trace)?;
        let js = frame.eval_at(m, record.time, self.flow_params.step);
        let a_tilde = linalg::mat_vec(&js.dv1, &a, n);
        let eta_tilde = m.flat(&js.phase().x, &a_tilde)?;
        let mut out_v = [0.0; 6];
        let mut out_t = [0.0; 6];
        for i in 0..n {
            out_v[i] = base.x.coords[i];
            out_v[n + i] = eta.components[i];
            out_t[i] = js.x[i];
            out_t[n + i] = eta_tilde.components[i];
        }
        Ok((out_v, out_t))
    }

    /// Finite-difference Jacobians of the two projections of the covector
    /// relation, parameterized by (ray params, time along ray, log scale).
    ///
    /// A record passes when both relative conditionings σ_min/σ_max exceed
    /// `tol_graph`.
    pub fn graph_test(&self, record: &ConjugateRecord, t_cap: Option<f64>) -> Result<GraphReport> {
        let m = self.metric;
        let n = m.dim();
        let n_axes = 2 * (n - 1);
        let dim_rel = n_axes + 2; // = 2n
        let kernel_ref = record.kernel[0];
        let h = self.params.graph_fd;
        let mut cols_v: Vec<[f64; 6]> = Vec::with_capacity(dim_rel);
        let mut cols_t: Vec<[f64; 6]> = Vec::with_capacity(dim_rel);
        let eval = |dp: &[f64; 4], doff: f64, dls: f64| -> Result<([f64; 6], [f64; 6])> {
            let mut q = record.ray_params;
            for a in 0..n_axes {
                q[a] += dp[a];
            }
            self.relation_point(
                &q,
                record.base_offset + doff,
                dls,
                t_cap,
                &kernel_ref,
            )
        };
        for a in 0..n_axes {
            let mut dp = [0.0; 4];
            dp[a] = h;
            let (vp, tp) = eval(&dp, 0.0, 0.0)?;
            dp[a] = -h;
            let (vm, tm) = eval(&dp, 0.0, 0.0)?;
            cols_v.push(central(&vp, &vm, h));
            cols_t.push(central(&tp, &tm, h));
        }
        {
            let (vp, tp) = eval(&[0.0; 4], h, 0.0)?;
            let (vm, tm) = eval(&[0.0; 4], -h, 0.0)?;
            cols_v.push(central(&vp, &vm, h));
            cols_t.push(central(&tp, &tm, h));
        }
        {
            let (vp, tp) = eval(&[0.0; 4], 0.0, h)?;
            let (vm, tm) = eval(&[0.0; 4], 0.0, -h)?;
            cols_v.push(central(&vp, &vm, h));
            cols_t.push(central(&tp, &tm, h));
        }
        // row normalization: positions are O(1) chart units, covector rows are
        // measured relative to the probe baseline so the conditioning is
        // invariant under rescaling the covector fiber
        let (base0, conj0) = eval(&[0.0; 4], 0.0, 0.0)?;
        let mut eta_norm = 0.0;
        let mut eta_t_norm = 0.0;
        for i in 0..n {
            eta_norm += base0[n + i] * base0[n + i];
            eta_t_norm += conj0[n + i] * conj0[n + i];
        }
        let eta_norm = eta_norm.sqrt().max(1e-300);
        let eta_t_norm = eta_t_norm.sqrt().max(1e-300);
        let margin = |cols: &[[f64; 6]], cov_scale: f64| -> f64 {
            let mut mat = nalgebra::DMatrix::<f64>::zeros(2 * n, dim_rel);
            for (c, col) in cols.iter().enumerate() {
                for r in 0..n {
                    mat[(r, c)] = col[r];
                    mat[(n + r, c)] = col[n + r] / cov_scale;
                }
            }
            let svd = mat.svd(false, false);
            let max = svd.singular_values.max();
            let min = svd.singular_values.min();
            if max <= 0.0 {
                0.0
            } else {
                min / max
            }
        };
        let margin_base = margin(&cols_v, eta_norm);
        let margin_conj = margin(&cols_t, eta_t_norm);
        Ok(GraphReport {
            margin_base,
            margin_conj,
            passes: margin_base > self.params.tol_graph && margin_conj > self.params.tol_graph,
        })
    }
}

fn central(p: &[f64; 6], m: &[f64; 6], h: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = (p[i] - m[i]) / (2.0 * h);
    }
    out
}

fn norm6(v: &Vector, n: usize) -> f64 {
    v[..n].iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Locus CSV: one row per record.
pub fn write_locus_csv(path: impl AsRef<std::path::Path>, sample: &LocusSample, dim: usize) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "vx,vy,vz,vvx,vvy,vvz,cx,cy,cz,cvx,cvy,cvz,s,k,regular,sv0,sv1,eta0,eta1,eta2,etat0,etat1,etat2,res_base,res_conj,margin_base,margin_conj"
    )?;
    for r in &sample.records {
        let sv0 = r.singular_values.first().copied().unwrap_or(f64::NAN);
        let sv1 = r.singular_values.get(1).copied().unwrap_or(f64::NAN);
        let (rb, rc) = r.residuals.unwrap_or((f64::NAN, f64::NAN));
        let (gb, gc) = r.graph_margins.unwrap_or((f64::NAN, f64::NAN));
        let _ = dim;
        writeln!(
            f,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.base.x.coords[0], r.base.x.coords[1], r.base.x.coords[2],
            r.base.v[0], r.base.v[1], r.base.v[2],
            r.conjugate.x.coords[0], r.conjugate.x.coords[1], r.conjugate.x.coords[2],
            r.conjugate.v[0], r.conjugate.v[1], r.conjugate.v[2],
            r.time, r.order,
            r.regular.map(|b| if b { 1 } else { 0 }).unwrap_or(-1),
            sv0, sv1,
            r.eta.components[0], r.eta.components[1], r.eta.components[2],
            r.eta_tilde.components[0], r.eta_tilde.components[1], r.eta_tilde.components[2],
            rb, rc, gb, gc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobi::jacobi_fd_oracle_full;
    use crate::manifold::{GaussianBump, SoundSpeed};
    use std::f64::consts::PI;

    fn slow_lens(amplitude: f64) -> MetricModel {
        MetricModel::conformal(
            2,
            SoundSpeed::GaussianBumps(vec![GaussianBump {
                amplitude,
                sigma: 0.25,
                center: ZERO_VEC,
            }]),
        )
    }

    fn scan<'a>(
        m: &'a MetricModel,
        d: &'a DomainModel,
        step: f64,
    ) -> ConjugacyScan<'a> {
        ConjugacyScan::new(
            m,
            d,
            FlowParams::default().with_step(step),
            ConjugacyParams::default(),
        )
    }

    #[test]
    fn sphere_patch_2d_first_conjugate_at_pi_order_one() {
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(4.0);
        let sc = scan(&m, &d, 1e-3);
        let x0 = Point::new2(0.5, 0.0);
        let v0 = m.normalize(&x0, &[0.0, 1.0, 0.0]).unwrap();
        let rec = sc
            .first_conjugate(&PhaseState::new(x0, v0), Some(3.4))
            .unwrap()
            .expect("conjugate point exists");
        assert!((rec.time - PI).abs() < 1e-4, "time {} vs π", rec.time);
        assert_eq!(rec.order, 1);
        // antipodal image in stereographic coordinates
        assert!((rec.conjugate.x.coords[0] + 2.0).abs() < 1e-4);
        assert!(rec.conjugate.x.coords[1].abs() < 1e-4);
    }

    #[test]
    fn sphere_patch_3d_first_conjugate_at_pi_order_two() {
        let m = MetricModel::sphere_patch(3, 1.0);
        let d = DomainModel::ball(4.0);
        let sc = scan(&m, &d, 1e-3);
        let x0 = Point::new3(0.5, 0.0, 0.0);
        let v0 = m.normalize(&x0, &[0.0, 1.0, 0.0]).unwrap();
        let rec = sc
            .first_conjugate(&PhaseState::new(x0, v0), Some(3.4))
            .unwrap()
            .expect("conjugate point exists");
        assert!((rec.time - PI).abs() < 1e-4);
        assert_eq!(rec.order, 2, "both normal directions vanish at the antipode");
    }

    #[test]
    fn euclidean_locus_is_empty() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 8,
                n_direction: 4,
                ..Default::default()
            })
            .unwrap();
        assert!(sample.records.is_empty());
        assert_eq!(sample.failed_rays, 0);
    }

    #[test]
    fn lens_conjugate_times_match_dense_scan_oracle() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let coarse = scan(&m, &d, 2e-3);
        let fine = scan(&m, &d, 2e-4); // 10x resolution oracle
        let chart = BoundaryChart::new(&m, &d);
        for alpha in [0.3, 1.4, 2.6] {
            let ray = chart.ray_from_params(&[alpha, 0.25, 0.0, 0.0]).unwrap();
            let base = PhaseState::new(ray.point, ray.direction);
            let a = coarse.first_conjugate(&base, None).unwrap();
            let b = fine.first_conjugate(&base, None).unwrap();
            match (a, b) {
                (Some(ra), Some(rb)) => {
                    assert!(
                        (ra.time - rb.time).abs() < 1e-4,
                        "dense-scan mismatch: {} vs {}",
                        ra.time,
                        rb.time
                    );
                    assert_eq!(ra.order, rb.order);
                }
                (None, None) => {}
                other => panic!("coarse/fine disagree on existence: {other:?}"),
            }
        }
    }

    #[test]
    fn lens_locus_records_are_regular_order_one() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 12,
                n_direction: 6,
                ..Default::default()
            })
            .unwrap();
        assert!(
            sample.records.len() >= 8,
            "expected a nonempty locus, got {}",
            sample.records.len()
        );
        assert_eq!(sample.singular_count, 0);
        for r in &sample.records {
            assert_eq!(r.order, 1);
            assert!(r.order <= m.dim() - 1, "order bound k ≤ n−1");
        }
    }

    #[test]
    fn covectors_annihilate_their_base_directions() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 12,
                n_direction: 6,
                ..Default::default()
            })
            .unwrap();
        assert!(!sample.records.is_empty());
        for r in &sample.records {
            let ev: f64 = (0..2).map(|i| r.eta.components[i] * r.base.v[i]).sum();
            let et: f64 = (0..2)
                .map(|i| r.eta_tilde.components[i] * r.conjugate.v[i])
                .sum();
            assert!(ev.abs() < 1e-8, "eta(v) = {ev:.2e}");
            assert!(et.abs() < 1e-6, "eta_tilde(v_tilde) = {et:.2e}");
        }
    }

    #[test]
    fn propagated_covector_matches_flow_finite_differences() {
        // the conjugate-side covector comes from the propagated kernel vector;
        // check the propagation against direct finite differences of the flow
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(4.0);
        let sc = scan(&m, &d, 1e-3);
        let x0 = Point::new2(0.6, -0.1);
        let v0 = m.normalize(&x0, &[0.1, 1.0, 0.0]).unwrap();
        let base = PhaseState::new(x0, v0);
        let rec = sc
            .first_conjugate(&base, Some(3.4))
            .unwrap()
            .expect("record");
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(1e-3));
        let (dx_fd, dv_fd) =
            jacobi_fd_oracle_full(&flow, &base, &rec.kernel[0], rec.time, 1e-6).unwrap();
        // at the conjugate time the position variation vanishes
        assert!(linalg::dot(&dx_fd, &dx_fd, 2).sqrt() < 1e-4);
        let eta_fd = m.flat(&rec.conjugate.x, &dv_fd).unwrap();
        for i in 0..2 {
            assert!(
                (eta_fd.components[i] - rec.eta_tilde.components[i]).abs() < 1e-4,
                "component {i}: {} vs {}",
                eta_fd.components[i],
                rec.eta_tilde.components[i]
            );
        }
    }

    #[test]
    fn common_covector_residuals_small_on_lens_records() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 12,
                n_direction: 6,
                ..Default::default()
            })
            .unwrap();
        assert!(!sample.records.is_empty());
        for r in sample.records.iter().take(8).filter(|r| r.regular == Some(true)) {
            let rep = sc.etalem_check_record(r).unwrap();
            assert!(
                rep.res_base < 5e-3 && rep.res_conj < 5e-3,
                "residuals {:.2e} {:.2e}",
                rep.res_base,
                rep.res_conj
            );
        }
    }

    #[test]
    fn common_covector_negative_control_fails_loudly() {
        // a non-conjugate pair with velocity-annihilating covectors admits no
        // common boundary covector
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let base = sc.ray_base(&[0.3, 0.25, 0.0, 0.0], 0.05).unwrap();
        let rec = sc.first_conjugate(&base, None).unwrap().expect("record");
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(2e-3));
        let mut s = rec.base;
        let steps = ((rec.time * 0.55) / 2e-3) as usize;
        for _ in 0..steps {
            s = flow.flow_step(&s, 2e-3).unwrap();
        }
        let perp_cov = |x: &Point, v: &Vector| -> Covector {
            let g = m.metric_at(x).unwrap();
            let gv = linalg::mat_vec(&g, v, 2);
            m.flat(x, &[-gv[1], gv[0], 0.0]).unwrap()
        };
        let eta = perp_cov(&rec.base.x, &rec.base.v);
        let eta2 = perp_cov(&s.x, &s.v);
        let rep = sc.etalem_check(&rec.base, &s, &eta, &eta2).unwrap();
        assert!(
            rep.res_base.max(rep.res_conj) > 0.1,
            "negative control residuals {:.2e} {:.2e}",
            rep.res_base,
            rep.res_conj
        );
    }

    #[test]
    fn common_covector_residual_invariant_under_scaling() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let base = sc.ray_base(&[1.4, 0.25, 0.0, 0.0], 0.05).unwrap();
        let rec = sc.first_conjugate(&base, None).unwrap().expect("record");
        let rep = sc.etalem_check_record(&rec).unwrap();
        let scale2 = |c: &Covector| Covector {
            base: c.base,
            components: linalg::scale(&c.components, 2.0, 3),
        };
        let rep2 = sc
            .etalem_check(
                &rec.base,
                &rec.conjugate,
                &scale2(&rec.eta),
                &scale2(&rec.eta_tilde),
            )
            .unwrap();
        assert!((rep.res_base - rep2.res_base).abs() < 1e-12);
        assert!((rep.res_conj - rep2.res_conj).abs() < 1e-12);
    }

    #[test]
    fn reversed_record_has_same_time_and_order() {
        let m = slow_lens(-0.4);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let base = sc.ray_base(&[2.6, -0.2, 0.0, 0.0], 0.05).unwrap();
        let rec = sc.first_conjugate(&base, None).unwrap().expect("record");
        let back = PhaseState {
            x: rec.conjugate.x,
            v: linalg::scale(&rec.conjugate.v, -1.0, 2),
        };
        let rev = sc
            .first_conjugate(&back, Some(rec.time + 0.3))
            .unwrap()
            .expect("reverse record");
        assert!(
            (rev.time - rec.time).abs() < 1e-4,
            "reverse time {} vs {}",
            rev.time,
            rec.time
        );
        assert_eq!(rev.order, rec.order);
    }

    #[test]
    fn sphere_locus_all_at_pi_and_regular() {
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(3.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 8,
                n_direction: 4,
                ..Default::default()
            })
            .unwrap();
        assert!(!sample.records.is_empty());
        assert_eq!(sample.singular_count, 0);
        for r in &sample.records {
            assert!((r.time - PI).abs() < 1e-3, "time {}", r.time);
            assert_eq!(r.order, 1);
            assert_eq!(r.regular, Some(true));
        }
    }

    #[test]
    fn graph_test_passes_on_weak_lens_and_scales_invariantly() {
        let m = slow_lens(-0.3);
        let d = DomainModel::disk(1.0);
        let sc = scan(&m, &d, 2e-3);
        let base = sc.ray_base(&[0.8, 0.15, 0.0, 0.0], 0.02).unwrap();
        let mut rec = sc.first_conjugate(&base, None).unwrap().expect("record");
        rec.ray_params = [0.8, 0.15, 0.0, 0.0];
        rec.base_offset = 0.02;
        let report = sc.graph_test(&rec, None).unwrap();
        assert!(
            report.passes,
            "margins {:.2e} {:.2e}",
            report.margin_base,
            report.margin_conj
        );
        // conic invariance: rescaling the covector fiber leaves the outcome
        let mut scaled = rec.clone();
        scaled.eta.components = linalg::scale(&rec.eta.components, 10.0, 3);
        scaled.eta_tilde.components = linalg::scale(&rec.eta_tilde.components, 10.0, 3);
        let report2 = sc.graph_test(&scaled, None).unwrap();
        assert!((report.margin_base - report2.margin_base).abs() < 1e-10);
        assert!((report.margin_conj - report2.margin_conj).abs() < 1e-10);
    }

    #[test]
    fn graph_test_sphere_patch_reports_healthy_single_branch() {
        // each branch of the antipodal relation is a local graph; the sphere's
        // pathology (conjugacy along infinitely many geodesics) is global and
        // invisible to a single-branch Jacobian
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(3.0);
        let sc = scan(&m, &d, 2e-3);
        let sample = sc
            .locus_scan(&FanSpec {
                n_boundary: 4,
                n_direction: 2,
                ..Default::default()
            })
            .unwrap();
        let rec = sample.records.first().expect("sphere record");
        let report = sc.graph_test(rec, None).unwrap();
        assert!(report.margin_base.is_finite() && report.margin_conj.is_finite());
        assert!(report.passes, "single antipodal branch is well conditioned");
    }
}
