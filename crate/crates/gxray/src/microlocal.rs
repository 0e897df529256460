//! Order and artifact probes for the normal operator.
//!
//! The smoothing order is witnessed by oscillatory probes: apply the normal
//! operator to `envelope · cos(λ ⟨x − x₀, ξ̂₀⟩)` over a frequency ladder and
//! fit the log-log decay of the local amplitude near the carrier. An order −1
//! operator yields slope −1. Near a conjugate point the operator additionally
//! transports singularities to the conjugate image; the ratio of artifact to
//! primary amplitude decays like λ^{−(n−2)/2} when only order-one pairs occur.
//!
//! Probe fields are evaluated analytically along rays, so the ladder is
//! limited by the quadrature step rather than the field grid.

use crate::conjugacy::{ConjugacyScan, LocusSample};
use crate::error::{Error, Result};
use crate::flow::PhaseState;
use crate::linalg::{self, Vector};
use crate::manifold::Point;
use crate::xray::Projector;

/// An oscillatory probe: carrier point, covector direction, frequency ladder
/// and Gaussian envelope width.
///
/// The ladder must sit in the oscillatory regime: the decay exponent is only
/// meaningful once the envelope holds several wavelengths, i.e. `λ·width ≳ 5`
/// at the bottom rung. Below that the probe is just a bump and the measured
/// slope is biased toward zero.
#[derive(Clone, Debug)]
pub struct ProbeSpec {
    pub center: Point,
    /// Covector direction (chart components; normalized internally).
    pub xi: Vector,
    pub lambdas: Vec<f64>,
    pub envelope_width: f64,
    /// Cap on the number of measurement nodes per window (deterministically
    /// subsampled when the grid window is larger).
    pub max_window_nodes: usize,
}

impl ProbeSpec {
    /// Default ladder spanning one decade in the oscillatory regime for the
    /// default envelope width (one tenth of the domain diameter scale).
    pub fn default_ladder(diameter: f64) -> Vec<f64> {
        [100.0, 200.0, 400.0, 800.0, 1000.0]
            .iter()
            .map(|l| l / diameter)
            .collect()
    }

    pub fn default_envelope(diameter: f64) -> f64 {
        0.1 * diameter / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.len() < 3 {
            return Err(Error::Numerics("probe ladder needs at least 3 rungs".into()));
        }
        let lo = self.lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.lambdas.iter().cloned().fold(0.0, f64::max);
        if hi / lo < 10.0 - 1e-9 {
            return Err(Error::Numerics(format!(
                "probe ladder must span at least one decade (got {:.2}x)",
                hi / lo
            )));
        }
        if self.envelope_width <= 0.0 {
            return Err(Error::Numerics("envelope width must be positive".into()));
        }
        Ok(())
    }
}

/// Log-log amplitude fit over the frequency ladder.
#[derive(Clone, Debug)]
pub struct ExponentFit {
    pub lambdas: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub slope: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// Confidence half-width of the slope (2 standard errors).
    pub half_width: f64,
    /// Slope claims are suppressed when the residual is too large.
    pub conclusive: bool,
}

fn fit_loglog(lambdas: &[f64], amps: &[f64]) -> ExponentFit {
    let m = lambdas.len();
    let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = amps.iter().map(|a| a.max(1e-300).ln()).collect();
    let xm = xs.iter().sum::<f64>() / m as f64;
    let ym = ys.iter().sum::<f64>() / m as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let dof = (m as f64 - 2.0).max(1.0);
    let residual = (ss_res / dof).sqrt();
    let half_width = 2.0 * residual / sxx.sqrt();
    ExponentFit {
        lambdas: lambdas.to_vec(),
        amplitudes: amps.to_vec(),
        slope,
        residual,
        half_width,
        conclusive: residual < 0.05,
    }
}

/// Grid nodes within radius `r` of a center, restricted to the mask.
fn window_nodes(p: &Projector, center: &Point, r: f64) -> Vec<u32> {
    let geom = &p.field_geom;
    let mut out = Vec::new();
    for &node in p.masked_nodes() {
        let x = geom.node_point(node as usize);
        let mut d2 = 0.0;
        for a in 0..geom.dim {
            let d = x.coords[a] - center.coords[a];
            d2 += d * d;
        }
        if d2.sqrt() <= r {
            out.push(node);
        }
    }
    out
}

/// Subtract a windowed median (the smooth background) from values sampled at
/// scattered nodes; `r_cells` is the neighbor radius in grid cells.
fn subtract_median(
    p: &Projector,
    nodes: &[u32],
    values: &[f64],
    r_cells: usize,
) -> Vec<f64> {
    let geom = &p.field_geom;
    let pts: Vec<[usize; 3]> = nodes
        .iter()
        .map(|&n| geom.unflatten(n as usize))
        .collect();
    let r = r_cells as isize;
    let mut out = Vec::with_capacity(nodes.len());
    let mut buf = Vec::new();
    for (i, pi) in pts.iter().enumerate() {
        buf.clear();
        for (j, pj) in pts.iter().enumerate() {
            let mut ok = true;
            for a in 0..geom.dim {
                if (pi[a] as isize - pj[a] as isize).abs() > r {
                    ok = false;
                    break;
                }
            }
            if ok {
                buf.push(values[j]);
            }
        }
        let k = buf.len() / 2;
        let (_, med, _) = buf.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).expect("finite"));
        out.push(values[i] - *med);
    }
    out
}

/// L² amplitude of the background-subtracted field over a window.
fn window_amplitude(p: &Projector, nodes: &[u32], raw: &[f64], r_med_cells: usize) -> f64 {
    let detrended = subtract_median(p, nodes, raw, r_med_cells);
    let cell = p.field_geom.cell_volume();
    (detrended.iter().map(|v| v * v).sum::<f64>() * cell).sqrt()
}

fn probe_field(
    spec: &ProbeSpec,
    lambda: f64,
    dim: usize,
) -> impl Fn(&Point) -> f64 + Sync + '_ {
    let xin = {
        let n = linalg::dot(&spec.xi, &spec.xi, dim).sqrt();
        linalg::scale(&spec.xi, 1.0 / n, dim)
    };
    move |x: &Point| {
        let mut r2 = 0.0;
        let mut phase = 0.0;
        for a in 0..dim {
            let d = x.coords[a] - spec.center.coords[a];
            r2 += d * d;
            phase += d * xin[a];
        }
        let w = spec.envelope_width;
        (-0.5 * r2 / (w * w)).exp() * (lambda * phase).cos()
    }
}

/// Quadrature step adapted to a frequency: a fixed number of points per
/// oscillation wavelength (so the relative quadrature error is the same on
/// every rung and cancels in the slope), capped by the configured step.
fn step_for(p: &Projector, lambda: f64) -> f64 {
    let per_wavelength = 8.0;
    let wl = 2.0 * std::f64::consts::PI / lambda;
    (wl / per_wavelength).min(p.flow_params.step)
}

/// Direction count adapted to a frequency: the line integral through the wave
/// packet peaks over an angular band of width ~1/(λw), which the sphere rule
/// must resolve.
fn sphere_count_for(p: &Projector, lambda: f64, width: f64) -> usize {
    let s = lambda * width;
    match p.dim() {
        2 => p.sphere_rule.count.max((30.0 * s).ceil() as usize),
        _ => p.sphere_rule.count.max((6.0 * s * s).ceil() as usize),
    }
}

/// Deterministic subsample of window nodes (evenly strided).
fn subsample(nodes: Vec<u32>, cap: usize) -> Vec<u32> {
    if nodes.len() <= cap {
        return nodes;
    }
    let stride = nodes.len() as f64 / cap as f64;
    (0..cap)
        .map(|i| nodes[(i as f64 * stride) as usize])
        .collect()
}

/// Median window sized to the oscillation: about one wavelength across.
fn median_radius_cells(p: &Projector, lambda: f64) -> usize {
    let wl = 2.0 * std::f64::consts::PI / lambda;
    ((0.5 * wl / p.field_geom.spacing).ceil() as usize).clamp(2, 12)
}

/// Decay exponent of the normal operator on oscillatory probes near the
/// carrier point; slope ≈ −1 where the operator acts as an order −1
/// pseudodifferential operator with the probe direction visible to the weight.
pub fn order_probe(p: &Projector, spec: &ProbeSpec) -> Result<ExponentFit> {
    spec.validate()?;
    let dim = p.dim();
    let window = subsample(
        window_nodes(p, &spec.center, 3.0 * spec.envelope_width),
        spec.max_window_nodes,
    );
    if window.is_empty() {
        return Err(Error::Numerics("probe window contains no grid nodes".into()));
    }
    let mut amps = Vec::with_capacity(spec.lambdas.len());
    let support = (spec.center.coords, 7.0 * spec.envelope_width);
    for &lambda in &spec.lambdas {
        let mut probe = p.probe_clone(step_for(p, lambda));
        probe.sphere_rule.count = sphere_count_for(p, lambda, spec.envelope_width);
        let field = probe_field(spec, lambda, dim);
        let vals = probe.normal_direct_fn(&field, &window, Some(support))?;
        amps.push(window_amplitude(
            p,
            &window,
            &vals,
            median_radius_cells(p, lambda),
        ));
    }
    Ok(fit_loglog(&spec.lambdas, &amps))
}

/// Primary and artifact amplitude fits plus their ratio slope.
#[derive(Clone, Debug)]
pub struct ArtifactReport {
    pub primary: ExponentFit,
    pub artifact: ExponentFit,
    /// Slope of log(artifact/primary) against log λ.
    pub ratio_slope: f64,
    pub ratio_residual: f64,
    /// Conjugate image of the carrier used for the artifact window.
    pub image: Point,
    /// Distance (in grid cells) from the artifact amplitude centroid to the
    /// predicted image, at the top of the ladder.
    pub centroid_offset_cells: f64,
}

/// Probe the artifact transported to the conjugate image of the carrier.
///
/// The direction generating the artifact is a unit vector annihilated by the
/// probe covector; its first conjugate point locates the artifact window. The
/// locus sample gates the precondition that order-one pairs exist.
pub fn artifact_probe(
    p: &Projector,
    scan: &ConjugacyScan,
    spec: &ProbeSpec,
    locus: &LocusSample,
) -> Result<ArtifactReport> {
    spec.validate()?;
    let dim = p.dim();
    if !locus.records.iter().any(|r| r.order == 1) {
        return Err(Error::Numerics(
            "locus sample has no order-one records near the probe".into(),
        ));
    }
    // a g-unit direction with ξ(v) = 0: rotate the sharp of ξ in the plane
    // spanned with a complementary axis
    let m = p.metric;
    let xi_sharp = m.sharp(&crate::manifold::Covector {
        base: spec.center,
        components: spec.xi,
    })?;
    let frame = m.frame_adapted(&spec.center, &m.normalize(&spec.center, &xi_sharp)?)?;
    let v = frame[1];
    // first conjugate point along ±v
    let mut image = None;
    for dir in [v, linalg::scale(&v, -1.0, dim)] {
        let base = PhaseState::new(spec.center, dir);
        if let Some(rec) = scan.first_conjugate(&base, None)? {
            if rec.order == 1 {
                image = Some(rec.conjugate.x);
                break;
            }
        }
    }
    let image = image.ok_or_else(|| {
        Error::Numerics("no order-one conjugate image found for the carrier".into())
    })?;
    let sep = {
        let mut d2 = 0.0;
        for a in 0..dim {
            let d = image.coords[a] - spec.center.coords[a];
            d2 += d * d;
        }
        d2.sqrt()
    };
    let r_win = 3.0 * spec.envelope_width;
    if sep < 2.0 * r_win {
        return Err(Error::Numerics(format!(
            "conjugate image at distance {sep:.3} overlaps the probe support"
        )));
    }
    let primary_window = subsample(window_nodes(p, &spec.center, r_win), spec.max_window_nodes);
    let artifact_window = subsample(window_nodes(p, &image, r_win), spec.max_window_nodes);
    if primary_window.is_empty() || artifact_window.is_empty() {
        return Err(Error::Numerics("empty probe window".into()));
    }
    let mut amps_p = Vec::new();
    let mut amps_a = Vec::new();
    let mut centroid_offset_cells = f64::NAN;
    let support = (spec.center.coords, 7.0 * spec.envelope_width);
    for (i, &lambda) in spec.lambdas.iter().enumerate() {
        let mut probe = p.probe_clone(step_for(p, lambda));
        probe.sphere_rule.count = sphere_count_for(p, lambda, spec.envelope_width);
        let field = probe_field(spec, lambda, dim);
        let vp = probe.normal_direct_fn(&field, &primary_window, Some(support))?;
        let va = probe.normal_direct_fn(&field, &artifact_window, Some(support))?;
        let rmed = median_radius_cells(p, lambda);
        amps_p.push(window_amplitude(p, &primary_window, &vp, rmed));
        amps_a.push(window_amplitude(p, &artifact_window, &va, rmed));
        if i + 1 == spec.lambdas.len() {
            // artifact centroid at the top of the ladder
            let det = subtract_median(p, &artifact_window, &va, rmed);
            let mut wsum = 0.0;
            let mut c = [0.0; 3];
            for (j, &node) in artifact_window.iter().enumerate() {
                let x = p.field_geom.node_point(node as usize);
                let w = det[j].abs();
                wsum += w;
                for a in 0..dim {
                    c[a] += w * x.coords[a];
                }
            }
            if wsum > 0.0 {
                let mut d2 = 0.0;
                for a in 0..dim {
                    let d = c[a] / wsum - image.coords[a];
                    d2 += d * d;
                }
                centroid_offset_cells = d2.sqrt() / p.field_geom.spacing;
            }
        }
    }
    let primary = fit_loglog(&spec.lambdas, &amps_p);
    let artifact = fit_loglog(&spec.lambdas, &amps_a);
    let ratios: Vec<f64> = amps_a
        .iter()
        .zip(&amps_p)
        .map(|(a, b)| a / b.max(1e-300))
        .collect();
    let ratio_fit = fit_loglog(&spec.lambdas, &ratios);
    Ok(ArtifactReport {
        primary,
        artifact,
        ratio_slope: ratio_fit.slope,
        ratio_residual: ratio_fit.residual,
        image,
        centroid_offset_cells,
    })
}

/// Point-spread radial decay: apply the normal operator to a narrow bump and
/// fit the log-log radial profile over `[r_min, r_max]`.
///
/// Returns (exponent, fit residual).
pub fn psf_fit(
    p: &Projector,
    center: &Point,
    r_min: f64,
    r_max: f64,
    bump_width: f64,
) -> Result<(f64, f64)> {
    if r_max <= r_min {
        return Err(Error::Numerics(format!(
            "psf fit window [{r_min:.3}, {r_max:.3}] is empty"
        )));
    }
    let dim = p.dim();
    let window = window_nodes(p, center, r_max * 1.02);
    if window.len() < 16 {
        return Err(Error::Numerics("psf window too small".into()));
    }
    let w = bump_width;
    let c = *center;
    let field = move |x: &Point| {
        let mut r2 = 0.0;
        for a in 0..dim {
            let d = x.coords[a] - c.coords[a];
            r2 += d * d;
        }
        (-0.5 * r2 / (w * w)).exp()
    };
    let probe = p.probe_clone(p.flow_params.step.min(w / 3.0));
    let vals = probe.normal_direct_fn(&field, &window, Some((center.coords, 8.0 * w)))?;
    // log-spaced radial bins
    let n_bins = 10;
    let lg_min = r_min.ln();
    let lg_max = r_max.ln();
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (j, &node) in window.iter().enumerate() {
        let x = p.field_geom.node_point(node as usize);
        let mut d2 = 0.0;
        for a in 0..dim {
            let d = x.coords[a] - center.coords[a];
            d2 += d * d;
        }
        let r = d2.sqrt();
        if r < r_min || r > r_max {
            continue;
        }
        let b = (((r.ln() - lg_min) / (lg_max - lg_min) * n_bins as f64) as usize).min(n_bins - 1);
        sums[b] += vals[j];
        counts[b] += 1;
    }
    let mut radii = Vec::new();
    let mut profile = Vec::new();
    for b in 0..n_bins {
        if counts[b] >= 2 {
            let r_mid = (lg_min + (b as f64 + 0.5) / n_bins as f64 * (lg_max - lg_min)).exp();
            radii.push(r_mid);
            profile.push((sums[b] / counts[b] as f64).abs());
        }
    }
    if radii.len() < 4 {
        return Err(Error::Numerics(
            "psf fit window produced fewer than 4 radial bins".into(),
        ));
    }
    let fit = fit_loglog(&radii, &profile);
    Ok((fit.slope, fit.residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::grid::GridGeom;
    use crate::manifold::{DomainModel, MetricModel};
    use crate::xray::{RayGrid, SphereRule, WeightField};

    fn euclid_projector<'a>(
        m: &'a MetricModel,
        d: &'a DomainModel,
        nodes: usize,
        k: usize,
        step: f64,
        weight: WeightField,
    ) -> Projector<'a> {
        let params = FlowParams::default().with_step(step);
        let rays = RayGrid::build(m, d, 8, 4, params.mu_min).unwrap();
        let geom = GridGeom::centered(m.dim(), nodes, 0.5 * d.chart_diameter() * 1.05);
        Projector::new(m, d, params, weight, rays, geom, SphereRule::new(m.dim(), k))
    }

    #[test]
    fn order_probe_euclidean_slope_near_minus_one() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let p = euclid_projector(&m, &d, 193, 192, 0.01, WeightField::Constant(1.0));
        let spec = ProbeSpec {
            center: Point::new2(0.05, -0.1),
            xi: [1.0, 0.3, 0.0],
            lambdas: ProbeSpec::default_ladder(2.0),
            envelope_width: 0.06,
        };
        let fit = order_probe(&p, &spec).unwrap();
        assert!(
            (fit.slope + 1.0).abs() < 0.05,
            "order slope {} (amps {:?})",
            fit.slope,
            fit.amplitudes
        );
        assert!(fit.conclusive, "residual {}", fit.residual);
    }

    #[test]
    fn order_probe_rotation_invariant_in_euclidean() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let p = euclid_projector(&m, &d, 193, 192, 0.01, WeightField::Constant(1.0));
        let mut slopes = Vec::new();
        for xi in [[1.0, 0.0, 0.0], [0.7, -0.7, 0.0]] {
            let spec = ProbeSpec {
                center: Point::new2(0.0, 0.0),
                xi,
                lambdas: ProbeSpec::default_ladder(2.0),
                envelope_width: 0.06,
            };
            slopes.push(order_probe(&p, &spec).unwrap().slope);
        }
        for s in &slopes {
            assert!((s - slopes[0]).abs() < 0.05, "slopes {slopes:?}");
        }
    }

    #[test]
    fn order_probe_blind_weight_decays_faster() {
        // a weight vanishing on the directions that see the probe covector
        // makes the amplitude decay faster than the elliptic slope
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let xi = [1.0, 0.0, 0.0];
        // directions with ξ(v) = 0 are ±e₂; kill a band around them
        let p = euclid_projector(
            &m,
            &d,
            193,
            192,
            0.01,
            WeightField::DirectionBandGap {
                axis: [1.0, 0.0, 0.0],
                gap: 0.35,
                width: 0.1,
            },
        );
        let spec = ProbeSpec {
            center: Point::new2(0.0, 0.0),
            xi,
            lambdas: ProbeSpec::default_ladder(2.0),
            envelope_width: 0.06,
        };
        let fit = order_probe(&p, &spec).unwrap();
        assert!(
            fit.slope < -1.6,
            "blind-weight slope {} should fall well below -1 (amps {:?})",
            fit.slope,
            fit.amplitudes
        );
    }

    #[test]
    fn order_probe_envelope_robustness() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let p = euclid_projector(&m, &d, 193, 192, 0.01, WeightField::Constant(1.0));
        let mut slopes = Vec::new();
        for w in [0.05, 0.1] {
            let spec = ProbeSpec {
                center: Point::new2(0.0, 0.0),
                xi: [1.0, 0.0, 0.0],
                lambdas: ProbeSpec::default_ladder(2.0),
                envelope_width: w,
            };
            slopes.push(order_probe(&p, &spec).unwrap().slope);
        }
        assert!(
            (slopes[0] - slopes[1]).abs() < 0.05,
            "envelope sensitivity: {slopes:?}"
        );
    }

    #[test]
    fn psf_exponent_euclidean_2d() {
        let m = MetricModel::euclidean(2);
        let d = DomainModel::disk(1.0);
        let p = euclid_projector(&m, &d, 257, 256, 0.005, WeightField::Constant(1.0));
        let h = p.field_geom.spacing;
        let (slope, resid) = psf_fit(&p, &Point::new2(0.0, 0.0), 4.0 * h, 0.2, 0.8 * h).unwrap();
        assert!(
            (slope + 1.0).abs() < 0.05,
            "psf exponent {slope} (residual {resid})"
        );
    }

    #[test]
    fn probe_ladder_must_span_a_decade() {
        let spec = ProbeSpec {
            center: Point::new2(0.0, 0.0),
            xi: [1.0, 0.0, 0.0],
            lambdas: vec![4.0, 8.0, 16.0],
            envelope_width: 0.06,
        };
        assert!(spec.validate().is_err());
    }
}
