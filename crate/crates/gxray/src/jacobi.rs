//! Matrix Jacobi fields along a geodesic: the derivative of the geodesic flow.
//!
//! Instead of assembling the curvature tensor we integrate the variational
//! equation — the linearization of `ẍ^k = −Γ^k_ij ẋ^i ẋ^j` — jointly with the
//! base geodesic:
//!
//! ```text
//! δẋ = δv,    δv̇^k = −∂_m Γ^k_ij δx^m ẋ^i ẋ^j − 2 Γ^k_ij ẋ^i δv^j
//! ```
//!
//! In coordinates `δx` is the Jacobi field `J` and `∇J^k = δv^k + Γ^k_ij ẋ^i J^j`
//! its covariant derivative, so both spec'd basis blocks `(J(0)=0, ∇J(0)=I)`
//! and `(J(0)=I, ∇J(0)=0)` are carried at once. A vertical tangent vector of
//! the sphere bundle with fiber components `a` propagates as `(J₁ a, δv₁ a)`
//! by linearity.

use crate::error::Result;
use crate::flow::{GeodesicFlow, GeodesicTrace, PhaseState};
use crate::linalg::{self, Matrix, Vector, ZERO_MAT, ZERO_VEC};
use crate::manifold::{MetricModel, Point};

/// Joint state: base geodesic plus the two variational basis blocks.
#[derive(Clone, Copy, Debug)]
pub struct JointState {
    pub x: Vector,
    pub v: Vector,
    /// Block with J(0) = 0, ∇J(0) = I (coordinates: δx(0)=0, δv(0)=I).
    pub dx1: Matrix,
    pub dv1: Matrix,
    /// Block with J(0) = I, ∇J(0) = 0.
    pub dx2: Matrix,
    pub dv2: Matrix,
}

impl JointState {
    fn zeros() -> Self {
        JointState {
            x: ZERO_VEC,
            v: ZERO_VEC,
            dx1: ZERO_MAT,
            dv1: ZERO_MAT,
            dx2: ZERO_MAT,
            dv2: ZERO_MAT,
        }
    }

    fn axpy(&mut self, c: f64, o: &JointState, n: usize) {
        for i in 0..n {
            self.x[i] += c * o.x[i];
            self.v[i] += c * o.v[i];
            for j in 0..n {
                self.dx1[i][j] += c * o.dx1[i][j];
                self.dv1[i][j] += c * o.dv1[i][j];
                self.dx2[i][j] += c * o.dx2[i][j];
                self.dv2[i][j] += c * o.dv2[i][j];
            }
        }
    }

    pub fn phase(&self) -> PhaseState {
        PhaseState {
            x: Point { coords: self.x },
            v: self.v,
        }
    }
}

fn joint_rhs(m: &MetricModel, s: &JointState) -> JointState {
    let n = m.dim();
    let gamma = m.christoffel_unchecked(&s.x);
    let dgamma = m.christoffel_deriv_unchecked(&s.x);
    let mut out = JointState::zeros();
    // base geodesic
    for k in 0..n {
        out.x[k] = s.v[k];
        let mut a = 0.0;
        for i in 0..n {
            for j in 0..n {
                a += gamma[k][i][j] * s.v[i] * s.v[j];
            }
        }
        out.v[k] = -a;
    }
    // contraction helpers: T^k_m = ∂_m Γ^k_ij v^i v^j, S^k_j = Γ^k_ij v^i
    let mut t = ZERO_MAT;
    let mut sm = ZERO_MAT;
    for k in 0..n {
        for mm in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += dgamma[mm][k][i][j] * s.v[i] * s.v[j];
                }
            }
            t[k][mm] = acc;
        }
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += gamma[k][i][j] * s.v[i];
            }
            sm[k][j] = acc;
        }
    }
    for col in 0..n {
        for k in 0..n {
            out.dx1[k][col] = s.dv1[k][col];
            out.dx2[k][col] = s.dv2[k][col];
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            for mm in 0..n {
                a1 += t[k][mm] * s.dx1[mm][col] + 2.0 * sm[k][mm] * s.dv1[mm][col];
                a2 += t[k][mm] * s.dx2[mm][col] + 2.0 * sm[k][mm] * s.dv2[mm][col];
            }
            out.dv1[k][col] = -a1;
            out.dv2[k][col] = -a2;
        }
    }
    out
}

pub(crate) fn joint_rk4_step(m: &MetricModel, s: &JointState, dt: f64) -> JointState {
    let n = m.dim();
    let k1 = joint_rhs(m, s);
    let mut s2 = *s;
    s2.axpy(0.5 * dt, &k1, n);
    let k2 = joint_rhs(m, &s2);
    let mut s3 = *s;
    s3.axpy(0.5 * dt, &k2, n);
    let k3 = joint_rhs(m, &s3);
    let mut s4 = *s;
    s4.axpy(dt, &k3, n);
    let k4 = joint_rhs(m, &s4);
    let mut out = *s;
    out.axpy(dt / 6.0, &k1, n);
    out.axpy(dt / 3.0, &k2, n);
    out.axpy(dt / 3.0, &k3, n);
    out.axpy(dt / 6.0, &k4, n);
    out
}

/// Matrix Jacobi solutions sampled along a geodesic trace.
#[derive(Clone, Debug)]
pub struct JacobiFrame {
    pub times: Vec<f64>,
    pub samples: Vec<JointState>,
    dim: usize,
}

/// Integrate the variational equation along the times of `trace`.
///
/// The base geodesic is re-integrated jointly (without per-step speed
/// renormalization, so the variational blocks stay exactly consistent with
/// the integrated flow).
pub fn jacobi_propagate(m: &MetricModel, trace: &GeodesicTrace) -> Result<JacobiFrame> {
    let n = m.dim();
    let start = trace.start();
    let gamma0 = m.christoffel_unchecked(&start.x.coords);
    let mut init = JointState::zeros();
    init.x = start.x.coords;
    init.v = start.v;
    for k in 0..n {
        init.dv1[k][k] = 1.0;
        init.dx2[k][k] = 1.0;
        // ∇J(0) = 0 for the second block means δv(0)^k_c = −Γ^k_ic v^i
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += gamma0[k][i][c] * start.v[i];
            }
            init.dv2[k][c] = -acc;
        }
    }
    let mut samples = Vec::with_capacity(trace.times.len());
    samples.push(init);
    let mut cur = init;
    for w in trace.times.windows(2) {
        let dt = w[1] - w[0];
        cur = joint_rk4_step(m, &cur, dt);
        samples.push(cur);
    }
    Ok(JacobiFrame {
        times: trace.times.clone(),
        samples,
        dim: n,
    })
}

impl JacobiFrame {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Joint state at an arbitrary time, re-integrated from the nearest
    /// stored sample at the given step.
    pub fn eval_at(&self, m: &MetricModel, t: f64, step: f64) -> JointState {
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).expect("finite times"))
        {
            Ok(i) => return self.samples[i],
            Err(i) => i.saturating_sub(1),
        };
        let mut s = self.samples[idx];
        let mut remaining = t - self.times[idx];
        while remaining.abs() > 1e-14 {
            let dt = if remaining > 0.0 {
                remaining.min(step)
            } else {
                remaining.max(-step)
            };
            s = joint_rk4_step(m, &s, dt);
            remaining -= dt;
        }
        s
    }

    /// Covariant derivative ∇J of a block at a sample: `δv + Γ(v, J)`.
    pub fn cov_deriv(&self, m: &MetricModel, sample: &JointState, block: usize) -> Matrix {
        let n = self.dim;
        let gamma = m.christoffel_unchecked(&sample.x);
        let (dx, dv) = match block {
            1 => (&sample.dx1, &sample.dv1),
            _ => (&sample.dx2, &sample.dv2),
        };
        let mut out = ZERO_MAT;
        for col in 0..n {
            for k in 0..n {
                let mut acc = dv[k][col];
                for i in 0..n {
                    for j in 0..n {
                        acc += gamma[k][i][j] * sample.v[i] * dx[j][col];
                    }
                }
                out[k][col] = acc;
            }
        }
        out
    }

    /// Drift of the symplectic pairing of the two basis blocks,
    /// `W(t) = ∇J₁ᵀ g J₂ − J₁ᵀ g ∇J₂`, relative to its value at t = 0.
    pub fn wronskian_drift(&self, m: &MetricModel) -> f64 {
        let n = self.dim;
        let mut w0 = ZERO_MAT;
        let mut max_drift = 0.0_f64;
        for (i, s) in self.samples.iter().enumerate() {
            let g = m.metric_unchecked(&s.x);
            let cd1 = self.cov_deriv(m, s, 1);
            let cd2 = self.cov_deriv(m, s, 2);
            // W = cd1ᵀ g dx2 − dx1ᵀ g cd2
            let g_dx2 = linalg::mat_mul(&g, &s.dx2, n);
            let g_cd2 = linalg::mat_mul(&g, &cd2, n);
            let a = linalg::mat_mul(&linalg::transpose(&cd1, n), &g_dx2, n);
            let b = linalg::mat_mul(&linalg::transpose(&s.dx1, n), &g_cd2, n);
            let mut w = ZERO_MAT;
            for r in 0..n {
                for c in 0..n {
                    w[r][c] = a[r][c] - b[r][c];
                }
            }
            if i == 0 {
                w0 = w;
            } else {
                for r in 0..n {
                    for c in 0..n {
                        max_drift = max_drift.max((w[r][c] - w0[r][c]).abs());
                    }
                }
            }
        }
        max_drift
    }
}

/// Finite-difference oracle for the full flow variation under a vertical
/// perturbation of the initial direction: returns (δx, δv) at time t.
pub fn jacobi_fd_oracle_full(
    flow: &GeodesicFlow,
    start: &PhaseState,
    a: &Vector,
    t: f64,
    eps: f64,
) -> Result<(Vector, Vector)> {
    let n = flow.dim();
    let run = |sign: f64| -> Result<(Vector, Vector)> {
        let mut v = start.v;
        linalg::axpy(&mut v, sign * eps, a, n);
        let s = PhaseState {
            x: start.x,
            v: flow.metric.normalize(&start.x, &v)?,
        };
        let mut cur = s;
        let h = flow.params.step;
        let mut remaining = t;
        while remaining > 1e-14 {
            let dt = remaining.min(h);
            cur = flow.rk4_step(&cur, dt);
            remaining -= dt;
        }
        Ok((cur.x.coords, cur.v))
    };
    let (xp, vp) = run(1.0)?;
    let (xm, vm) = run(-1.0)?;
    let mut dx = ZERO_VEC;
    let mut dv = ZERO_VEC;
    for i in 0..n {
        dx[i] = (xp[i] - xm[i]) / (2.0 * eps);
        dv[i] = (vp[i] - vm[i]) / (2.0 * eps);
    }
    Ok((dx, dv))
}

/// Finite-difference oracle: the variation of the geodesic position under a
/// vertical perturbation of the initial direction, `(γ_{v+εa}(t) − γ_{v−εa}(t)) / 2ε`.
pub fn jacobi_fd_oracle(
    flow: &GeodesicFlow,
    start: &PhaseState,
    a: &Vector,
    t: f64,
    eps: f64,
) -> Result<Vector> {
    let n = flow.dim();
    let run = |sign: f64| -> Result<Vector> {
        let mut v = start.v;
        linalg::axpy(&mut v, sign * eps, a, n);
        let s = PhaseState {
            x: start.x,
            v: flow.metric.normalize(&start.x, &v)?,
        };
        let mut cur = s;
        let h = flow.params.step;
        let mut remaining = t;
        while remaining > 1e-14 {
            let dt = remaining.min(h);
            cur = flow.rk4_step(&cur, dt);
            remaining -= dt;
        }
        Ok(cur.x.coords)
    };
    let plus = run(1.0)?;
    let minus = run(-1.0)?;
    let mut out = ZERO_VEC;
    for i in 0..n {
        out[i] = (plus[i] - minus[i]) / (2.0 * eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::manifold::{DomainModel, GaussianBump, SoundSpeed};
    use std::f64::consts::PI;

    #[test]
    fn euclidean_vanishing_block_is_t_identity() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default());
        let s = PhaseState::new(Point::new2(-0.5, 0.0), [1.0, 0.0, 0.0]);
        let trace = flow.trace(&s).unwrap();
        let frame = jacobi_propagate(&m, &trace).unwrap();
        for (t, js) in frame.times.iter().zip(frame.samples.iter()) {
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { *t } else { 0.0 };
                    assert!((js.dx1[i][j] - expect).abs() < 1e-10);
                    let expect2 = if i == j { 1.0 } else { 0.0 };
                    assert!((js.dx2[i][j] - expect2).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn sphere_patch_normal_jacobi_is_sine() {
        // |J(t) a|_g = sin t for the unit sphere when a is a g-unit vector
        // orthogonal to the direction
        let m = MetricModel::sphere_patch(2, 1.0);
        let d = DomainModel::disk(4.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(1e-3));
        let x0 = Point::new2(0.5, 0.0);
        let v0 = m.normalize(&x0, &[0.0, 1.0, 0.0]).unwrap();
        let start = PhaseState::new(x0, v0);
        // this great circle stays inside the chart disk, so integrate to a
        // fixed time past the antipode instead of to an exit
        let trace = flow.trace_until(&start, 3.3).unwrap();
        assert!(trace.exit_time() > PI, "trace must pass the antipode");
        let frame = jacobi_propagate(&m, &trace).unwrap();
        // g-unit vector orthogonal to v0
        let a = m.normalize(&x0, &[1.0, 0.0, 0.0]).unwrap();
        for probe_t in [0.5, 1.0, PI / 2.0, 2.0, PI] {
            let js = frame.eval_at(&m, probe_t, 1e-3);
            let ja = linalg::mat_vec(&js.dx1, &a, 2);
            let norm = m
                .norm(&Point { coords: js.x }, &ja)
                .unwrap();
            let expect = probe_t.sin().abs();
            assert!(
                (norm - expect).abs() < 1e-6,
                "|J a| at t={probe_t}: {norm} vs {expect}"
            );
        }
    }

    #[test]
    fn lens_jacobi_matches_finite_difference_flow_variation() {
        let m = MetricModel::conformal(
            2,
            SoundSpeed::GaussianBumps(vec![GaussianBump {
                amplitude: 0.5,
                sigma: 0.25,
                center: ZERO_VEC,
            }]),
        );
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(1e-3));
        let x0 = Point::new2(-0.8, 0.13);
        let start = PhaseState::unit(&m, x0, &[1.0, 0.0, 0.0]).unwrap();
        let trace = flow.trace(&start).unwrap();
        let frame = jacobi_propagate(&m, &trace).unwrap();
        // vertical direction tangent to the sphere bundle: a ⊥_g v
        let g = m.metric_at(&x0).unwrap();
        let mut a = [-(g[1][0] * start.v[0] + g[1][1] * start.v[1]), 0.0, 0.0];
        a[1] = g[0][0] * start.v[0] + g[0][1] * start.v[1];
        let t = 0.8 * trace.exit_time();
        let js = frame.eval_at(&m, t, 1e-3);
        let ja = linalg::mat_vec(&js.dx1, &a, 2);
        let fd = jacobi_fd_oracle(&flow, &start, &a, t, 1e-6).unwrap();
        let scale = linalg::dot(&ja, &ja, 2).sqrt().max(1e-12);
        for i in 0..2 {
            assert!(
                (ja[i] - fd[i]).abs() / scale < 1e-4,
                "J*a vs FD at component {i}: {} vs {}",
                ja[i],
                fd[i]
            );
        }
    }

    #[test]
    fn wronskian_pairing_is_time_constant() {
        let m = MetricModel::conformal(
            2,
            SoundSpeed::GaussianBumps(vec![GaussianBump {
                amplitude: 0.5,
                sigma: 0.25,
                center: ZERO_VEC,
            }]),
        );
        let d = DomainModel::disk(1.0);
        let flow = GeodesicFlow::new(&m, &d, FlowParams::default().with_step(2e-3));
        let start = PhaseState::unit(&m, Point::new2(-0.7, 0.21), &[1.0, -0.1, 0.0]).unwrap();
        let trace = flow.trace(&start).unwrap();
        let frame = jacobi_propagate(&m, &trace).unwrap();
        let drift = frame.wronskian_drift(&m);
        assert!(drift < 1e-6, "Wronskian drift {drift:.2e}");
    }
}
