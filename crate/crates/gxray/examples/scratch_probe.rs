use gxray::flow::FlowParams;
use gxray::grid::GridGeom;
use gxray::manifold::{DomainModel, MetricModel, Point};
use gxray::microlocal::{order_probe, ProbeSpec};
use gxray::xray::{Projector, RayGrid, SphereRule, WeightField};
use std::time::Instant;

fn main() {
    let m = MetricModel::euclidean(2);
    let d = DomainModel::disk(1.0);
    let params = FlowParams::default().with_step(0.01);
    let rays = RayGrid::build(&m, &d, 8, 4, params.mu_min).unwrap();
    let geom = GridGeom::centered(2, 193, 1.05);
    let p = Projector::new(&m, &d, params, WeightField::Constant(1.0), rays, geom, SphereRule::new(2, 256));
    for (w, lams, cap) in [
        (0.10, vec![50.0, 100.0, 200.0, 400.0, 500.0], 500usize),
        (0.12, vec![50.0, 100.0, 200.0, 400.0, 500.0], 500),
    ] {
        let spec = ProbeSpec {
            center: Point::new2(0.05, -0.1),
            xi: [1.0, 0.3, 0.0],
            lambdas: lams,
            envelope_width: w,
            max_window_nodes: cap,
        };
        let t0 = Instant::now();
        let fit = order_probe(&p, &spec).unwrap();
        println!(
            "w={w} cap={cap}: slope={:.4} resid={:.4} hw={:.4} amps={:?} [{:.1}s]",
            fit.slope, fit.residual, fit.half_width,
            fit.amplitudes.iter().map(|a| (a * 1e4).round() / 1e4).collect::<Vec<_>>(),
            t0.elapsed().as_secs_f64()
        );
    }
}
